use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{mm_acc, mm_at_acc, mm_bt_acc};
use super::{numel_of, Op, Tensor};
use crate::error::{dim_err, Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

pub(crate) fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

pub(crate) fn matmul_vjp(a: &Tensor, b: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let p = b.shape()[1];
    let ga = a.requires_grad().then(|| {
        let mut ga = vec![0.0; m * n];
        mm_bt_acc(g, b.data(), &mut ga, m, p, n);
        ga
    });
    let gb = b.requires_grad().then(|| {
        let mut gb = vec![0.0; n * p];
        mm_at_acc(a.data(), g, &mut gb, n, m, p);
        gb
    });
    vec![ga, gb]
}

fn concat_geometry(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, inner)
}

pub(crate) fn concat_vjp(parts: &[Tensor], axis: usize, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (outer, inner) = concat_geometry(parts[0].shape(), axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut offset = 0;
    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        let extent = p.shape()[axis];
        if p.requires_grad() {
            let mut gp = Vec::with_capacity(p.numel());
            for o in 0..outer {
                let start = (o * total + offset) * inner;
                gp.extend_from_slice(&g[start..start + extent * inner]);
            }
            out.push(Some(gp));
        } else {
            out.push(None);
        }
        offset += extent;
    }
    out
}

pub(crate) fn scale_rows_vjp(z: &Tensor, c: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (k, d) = (z.shape()[0], z.shape()[1]);
    let batch = c.shape()[0];
    let gz = z.requires_grad().then(|| {
        let mut gz = vec![0.0; k * d];
        for b in 0..batch {
            for i in 0..k {
                let coef = c.data()[b * k + i];
                if coef == 0.0 {
                    continue;
                }
                for j in 0..d {
                    gz[i * d + j] += coef * g[(b * k + i) * d + j];
                }
            }
        }
        gz
    });
    let gc = c.requires_grad().then(|| {
        let mut gc = vec![0.0; batch * k];
        for b in 0..batch {
            for i in 0..k {
                gc[b * k + i] = (0..d).map(|j| z.data()[i * d + j] * g[(b * k + i) * d + j]).sum();
            }
        }
        gc
    });
    vec![gz, gc]
}

impl Tensor {
    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(dim_err!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            ))
        }
    }

    fn map(&self, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Tensor> {
        let data = self.data().iter().map(|v| f(*v)).collect();
        Tensor::derived(name, data, self.shape().to_vec(), op)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Tensor::derived("add", data, self.shape().to_vec(), Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Tensor::derived("sub", data, self.shape().to_vec(), Op::Sub(self.clone(), other.clone()))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Tensor::derived("mul", data, self.shape().to_vec(), Op::Mul(self.clone(), other.clone()))
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.map("scale", |v| v * c, Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.map("add_scalar", |v| v + c, Op::AddScalar(self.clone()))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(dim_err!("matmul: {:?} × {:?}", a, b));
        }
        let (m, n, p) = (a[0], a[1], b[1]);
        let mut data = vec![0.0; m * p];
        mm_acc(self.data(), other.data(), &mut data, m, n, p);
        Tensor::derived("matmul", data, vec![m, p], Op::MatMul(self.clone(), other.clone()))
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(dim_err!("transpose needs a matrix, got {:?}", s));
        }
        let data = transpose_data(self.data(), s[0], s[1]);
        Tensor::derived("transpose", data, vec![s[1], s[0]], Op::Transpose(self.clone()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Contract(alloc::format!(
                "leaky_relu slope must lie in (0,1), got {slope}"
            )));
        }
        self.map(
            "leaky_relu",
            |v| if v > 0.0 { v } else { v * slope },
            Op::LeakyRelu(self.clone(), slope),
        )
    }

    pub fn abs(&self) -> Result<Tensor> {
        self.map("abs", libm::fabs, Op::Abs(self.clone()))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if self.data().iter().any(|v| *v < 0.0) {
            return Err(Error::NonFinite("sqrt"));
        }
        self.map("sqrt", libm::sqrt, Op::Sqrt(self.clone()))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map("sigmoid", sigmoid, Op::Sigmoid(self.clone()))
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.map("tanh", libm::tanh, Op::Tanh(self.clone()))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Tensor> {
        self.map("softplus", softplus, Op::Softplus(self.clone()))
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Tensor::derived("sum", vec![s], Vec::new(), Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(dim_err!("mean of an empty tensor"));
        }
        let s: f64 = self.data().iter().sum();
        Tensor::derived(
            "mean",
            vec![s / self.numel() as f64],
            Vec::new(),
            Op::Mean(self.clone()),
        )
    }

    /// Join tensors along `axis`; every other extent must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(dim_err!("concat axis {axis} out of range for rank {rank}"));
        }
        for p in parts {
            let s = p.shape();
            let ok = s.len() == rank
                && s.iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(dim_err!(
                    "concat along {axis}: {:?} incompatible with {:?}",
                    s,
                    first.shape()
                ));
            }
        }
        let (outer, inner) = concat_geometry(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[axis] * inner;
                data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Tensor::derived("concat", data, shape, Op::Concat(parts.to_vec(), axis))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", self.shape(), shape));
        }
        Tensor::derived(
            "reshape",
            self.data().to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        )
    }

    /// Repeat a row vector (`[n]` or `[1, n]`) into `[rows, n]`.
    pub fn broadcast_row(&self, rows: usize) -> Result<Tensor> {
        let s = self.shape();
        let n = match s {
            [n] => *n,
            [1, n] => *n,
            _ => return Err(dim_err!("broadcast_row needs [n] or [1,n], got {:?}", s)),
        };
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(self.data());
        }
        Tensor::derived("broadcast_row", data, vec![rows, n], Op::BroadcastRow(self.clone()))
    }

    /// `out[b, i, j] = z[i, j] · c[b, i]` for `z: [k, d]`, `c: [B, k]`.
    pub fn scale_rows(z: &Tensor, c: &Tensor) -> Result<Tensor> {
        let (zs, cs) = (z.shape(), c.shape());
        if zs.len() != 2 || cs.len() != 2 || cs[1] != zs[0] {
            return Err(dim_err!("scale_rows: z {:?} with coefficients {:?}", zs, cs));
        }
        let (k, d, batch) = (zs[0], zs[1], cs[0]);
        let mut data = Vec::with_capacity(batch * k * d);
        for b in 0..batch {
            for i in 0..k {
                let coef = c.data()[b * k + i];
                data.extend(z.data()[i * d..(i + 1) * d].iter().map(|v| v * coef));
            }
        }
        Tensor::derived(
            "scale_rows",
            data,
            vec![batch, k, d],
            Op::ScaleRows(z.clone(), c.clone()),
        )
    }
}
