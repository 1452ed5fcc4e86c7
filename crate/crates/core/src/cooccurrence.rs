//! Attribute co-occurrence statistics.
//!
//! Convention: `C[i][j] = P(a_i | a_j)`, the fraction of images carrying
//! attribute `j` that also carry attribute `i`. Row `i` is the conditioned
//! attribute, column `j` the conditioning one. `Ĉ = D⁻¹C` divides each row by
//! its sum, so every row of `Ĉ` is a distribution over neighbours.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Binary attribute annotation of one image, in the dataset's attribute order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeVector(Vec<u8>);

impl AttributeVector {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| **v > 1) {
            return Err(Error::Contract(alloc::format!(
                "attribute values must be 0 or 1, got {v}"
            )));
        }
        Ok(Self(values))
    }

    pub fn from_bools(values: &[bool]) -> Self {
        Self(values.iter().map(|b| u8::from(*b)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.0[i] = u8::from(on);
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|v| f64::from(*v)).collect()
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// `C`, its row sums `D` and the row-normalized adjacency `Ĉ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    pub names: Vec<String>,
    /// Row-major `k×k`.
    pub c: Vec<f64>,
    pub row_sums: Vec<f64>,
    /// Row-major `k×k`.
    pub c_hat: Vec<f64>,
}

impl CooccurrenceMatrix {
    pub fn k(&self) -> usize {
        self.names.len()
    }

    /// `P(a_i | a_j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.k() + j]
    }

    pub fn get_hat(&self, i: usize, j: usize) -> f64 {
        self.c_hat[i * self.k() + j]
    }

    /// Assemble from an explicit `C`, recomputing `D` and `Ĉ`.
    pub fn from_conditional(names: Vec<String>, c: Vec<f64>) -> Result<Self> {
        let k = names.len();
        if c.len() != k * k {
            return Err(Error::Dimension(alloc::format!(
                "{k} names need a {k}×{k} matrix, got {} entries",
                c.len()
            )));
        }
        let c_hat = normalize_adjacency(&c, k)?;
        let row_sums = c.chunks(k).map(|r| r.iter().sum()).collect();
        Ok(Self { names, c, row_sums, c_hat })
    }
}

/// Count-based estimate of `C` from annotations.
pub fn build_cooccurrence(
    names: &[String],
    annotations: &[AttributeVector],
) -> Result<CooccurrenceMatrix> {
    let k = names.len();
    if annotations.is_empty() {
        return Err(Error::Contract(String::from("no annotations to count")));
    }
    if let Some(bad) = annotations.iter().find(|a| a.len() != k) {
        return Err(Error::Dimension(alloc::format!(
            "annotation has {} attributes, expected {k}",
            bad.len()
        )));
    }

    let mut joint = vec![0u64; k * k];
    for a in annotations {
        let on: Vec<usize> = (0..k).filter(|&i| a.get(i)).collect();
        for &i in &on {
            for &j in &on {
                joint[i * k + j] += 1;
            }
        }
    }
    let mut c = vec![0.0; k * k];
    for j in 0..k {
        let support = joint[j * k + j];
        if support == 0 {
            return Err(Error::ZeroSupport { index: j, name: names[j].clone() });
        }
        for i in 0..k {
            c[i * k + j] = joint[i * k + j] as f64 / support as f64;
        }
    }
    CooccurrenceMatrix::from_conditional(names.to_vec(), c)
}

/// `Ĉ = D⁻¹C` for a row-major `k×k` matrix with positive row sums.
pub fn normalize_adjacency(c: &[f64], k: usize) -> Result<Vec<f64>> {
    if c.len() != k * k {
        return Err(Error::Dimension(alloc::format!(
            "expected {k}×{k} matrix, got {} entries",
            c.len()
        )));
    }
    let mut out = Vec::with_capacity(k * k);
    for (i, row) in c.chunks(k).enumerate() {
        let d: f64 = row.iter().sum();
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::DegenerateRow(i));
        }
        out.extend(row.iter().map(|v| v / d));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| alloc::format!("a{i}")).collect()
    }

    fn av(v: &[u8]) -> AttributeVector {
        AttributeVector::new(v.to_vec()).unwrap()
    }

    /// Brute force: iterate every image for every ordered attribute pair.
    fn oracle(k: usize, rows: &[AttributeVector]) -> Vec<f64> {
        let mut c = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let with_j = rows.iter().filter(|r| r.values()[j] == 1).count();
                let both = rows
                    .iter()
                    .filter(|r| r.values()[j] == 1 && r.values()[i] == 1)
                    .count();
                c[i * k + j] = both as f64 / with_j as f64;
            }
        }
        c
    }

    #[test]
    fn two_image_example() {
        let m = build_cooccurrence(&names(2), &[av(&[1, 1]), av(&[1, 0])]).unwrap();
        assert_eq!(m.c, vec![1.0, 1.0, 0.5, 1.0]);
        assert_eq!(m.get(0, 1), 1.0); // P(a1|a2)
        assert_eq!(m.get(1, 0), 0.5); // P(a2|a1)
    }

    #[test]
    fn never_co_occurring_pair_is_zero() {
        let m = build_cooccurrence(&names(3), &[av(&[1, 0, 1]), av(&[0, 1, 1])]).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn zero_support_is_rejected() {
        let err = build_cooccurrence(&names(2), &[av(&[1, 0])]).unwrap_err();
        assert_eq!(err, Error::ZeroSupport { index: 1, name: "a1".to_string() });
    }

    #[test]
    fn empty_and_ragged_inputs_are_rejected() {
        assert!(build_cooccurrence(&names(2), &[]).is_err());
        assert!(build_cooccurrence(&names(2), &[av(&[1, 1, 0])]).is_err());
        assert!(AttributeVector::new(vec![0, 2]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(normalize_adjacency(&eye, 3).unwrap(), eye);
        let h = normalize_adjacency(&[1.0, 1.0, 0.5, 1.0], 2).unwrap();
        let expect = [0.5, 0.5, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(normalize_adjacency(&[0.0, 0.0, 1.0, 1.0], 2), Err(Error::DegenerateRow(0)));
    }

    fn dataset() -> impl Strategy<Value = (usize, Vec<Vec<u8>>)> {
        (1usize..=8).prop_flat_map(|k| {
            (Just(k), prop::collection::vec(prop::collection::vec(0u8..=1, k), 1..=50))
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle((k, rows) in dataset()) {
            let mut rows: Vec<AttributeVector> = rows.into_iter().map(|r| av(&r)).collect();
            // guarantee support for every attribute
            rows.push(AttributeVector::new(vec![1; k]).unwrap());
            let m = build_cooccurrence(&names(k), &rows).unwrap();
            prop_assert_eq!(&m.c, &oracle(k, &rows));
            for i in 0..k {
                prop_assert_eq!(m.get(i, i), 1.0);
                let s: f64 = m.c_hat[i * k..(i + 1) * k].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn order_and_duplication_invariant((k, rows) in dataset(), rot in 0usize..50) {
            let mut rows: Vec<AttributeVector> = rows.into_iter().map(|r| av(&r)).collect();
            rows.push(AttributeVector::new(vec![1; k]).unwrap());
            let base = build_cooccurrence(&names(k), &rows).unwrap();
            let mut rotated = rows.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            rotated.reverse();
            prop_assert_eq!(&build_cooccurrence(&names(k), &rotated).unwrap().c, &base.c);
            let doubled: Vec<_> = rows.iter().chain(rows.iter()).cloned().collect();
            prop_assert_eq!(&build_cooccurrence(&names(k), &doubled).unwrap().c, &base.c);
        }

        #[test]
        fn normalized_rows_sum_to_one(k in 1usize..8, seed in prop::collection::vec(0.0f64..1.0, 64)) {
            let mut c: Vec<f64> = seed[..k * k].to_vec();
            for i in 0..k { c[i * k + i] += 0.1; }
            let h = normalize_adjacency(&c, k).unwrap();
            for row in h.chunks(k) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
