//! Co-occurrence coupling of the per-attribute classifier rows.
//!
//! The regularizer is the graph-Laplacian quadratic
//! `R = ½ Σ_{i≠j} A_ij ‖θ_i − θ_j‖²` over the interaction matrix
//! `A = ½(Ĉ + Ĉᵀ)` with a zeroed diagonal. Writing `L = diag(A·1) − A`,
//! `R = tr(Θᵀ L Θ)`, so `∂R/∂θ_i = 2 Σ_j A_ij (θ_i − θ_j)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::cooccurrence::CooccurrenceMatrix;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Symmetric, zero-diagonal coupling weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    k: usize,
    a: Vec<f64>,
    row_sums: Vec<f64>,
}

impl InteractionMatrix {
    /// Validate an explicit matrix.
    pub fn new(a: Vec<f64>, k: usize) -> Result<Self> {
        if a.len() != k * k {
            return Err(dim_err!("interaction matrix needs {} entries, got {}", k * k, a.len()));
        }
        for i in 0..k {
            if a[i * k + i] != 0.0 {
                return Err(Error::Contract(alloc::format!("nonzero diagonal at {i}")));
            }
            for j in 0..k {
                let v = a[i * k + j];
                if !(0.0..=1.0).contains(&v) || v != a[j * k + i] {
                    return Err(Error::Contract(alloc::format!(
                        "interaction weight ({i},{j}) = {v} is outside [0,1] or asymmetric"
                    )));
                }
            }
        }
        let row_sums = a.chunks(k).map(|r| r.iter().sum()).collect();
        Ok(Self { k, a, row_sums })
    }

    /// `½(Ĉ + Ĉᵀ)` with the diagonal cleared.
    pub fn from_normalized(c_hat: &[f64], k: usize) -> Result<Self> {
        if c_hat.len() != k * k {
            return Err(dim_err!("expected {k}×{k} matrix, got {} entries", c_hat.len()));
        }
        let mut a = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    a[i * k + j] = 0.5 * (c_hat[i * k + j] + c_hat[j * k + i]);
                }
            }
        }
        Self::new(a, k)
    }

    pub fn from_cooccurrence(m: &CooccurrenceMatrix) -> Result<Self> {
        Self::from_normalized(&m.c_hat, m.k())
    }

    pub fn zeros(k: usize) -> Self {
        Self { k, a: vec![0.0; k * k], row_sums: vec![0.0; k] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.k + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.a
    }

    /// Weighted degree `Σ_j A_ij`.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.row_sums[i]
    }

    /// `diag(A·1) − A`, row-major.
    pub fn laplacian(&self) -> Vec<f64> {
        let k = self.k;
        let mut l: Vec<f64> = self.a.iter().map(|v| -v).collect();
        for i in 0..k {
            l[i * k + i] = self.row_sums[i];
        }
        l
    }
}

fn check_rows(rows: &[usize], a: &InteractionMatrix) -> Result<()> {
    match rows {
        [k, _] if *k == a.k() => Ok(()),
        s => Err(dim_err!("expected {} classifier rows, got shape {:?}", a.k(), s)),
    }
}

/// `R = ½ Σ_{i≠j} A_ij ‖θ_i − θ_j‖²` for `rows: [k, F]`.
pub fn mtl_regularizer(rows: &Tensor, a: &InteractionMatrix) -> Result<Tensor> {
    check_rows(rows.shape(), a)?;
    let lap = Tensor::new(a.laplacian(), &[a.k(), a.k()])?;
    rows.mul(&lap.matmul(rows)?)?.sum()
}

/// `Σ_{i≠j} A_ij ‖θ_i − θ_j‖²` over plain row-major values (`2R`).
pub fn weighted_row_distance(rows: &[f64], a: &InteractionMatrix) -> Result<f64> {
    let k = a.k();
    if k == 0 || !rows.len().is_multiple_of(k) {
        return Err(dim_err!("{} values do not split into {k} rows", rows.len()));
    }
    let width = rows.len() / k;
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = a.get(i, j);
            if w == 0.0 {
                continue;
            }
            let d: f64 = rows[i * width..(i + 1) * width]
                .iter()
                .zip(&rows[j * width..(j + 1) * width])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += w * d;
        }
    }
    Ok(total)
}

/// Mean binary cross-entropy with logits, over every element.
pub fn bce_with_logits(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    if logits.shape() != labels.shape() {
        return Err(dim_err!("logits {:?} vs labels {:?}", logits.shape(), labels.shape()));
    }
    // softplus(z) − y·z
    logits.softplus()?.sub(&logits.mul(labels)?)?.mean()
}

/// Classifier loss on real images: per-attribute batch-mean BCE summed over
/// attributes, plus `lambda · R(rows)`.
pub fn cls_loss_real(
    logits: &Tensor,
    labels: &Tensor,
    rows: &Tensor,
    a: &InteractionMatrix,
    lambda: f64,
) -> Result<Tensor> {
    let k = match logits.shape() {
        [_, k] => *k,
        s => return Err(dim_err!("logits must be [B, k], got {:?}", s)),
    };
    let bce = bce_with_logits(logits, labels)?.scale(k as f64)?;
    if lambda == 0.0 {
        return Ok(bce);
    }
    bce.add(&mtl_regularizer(rows, a)?.scale(lambda)?)
}
