use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{col2im, im2col, mm_acc, mm_at_acc, mm_bt_acc, Window};
use super::{Node, Op, Tensor};
use crate::error::{dim_err, Result};

pub(crate) const INSTANCE_NORM_EPS: f64 = 1e-5;

pub(crate) struct ConvArgs {
    pub x: Tensor,
    pub w: Tensor,
    /// Window over the *larger* image: the input for conv2d, the output for
    /// the transpose.
    pub window: Window,
    pub batch: usize,
    pub filters: usize,
}

fn expect_rank4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        s => Err(dim_err!("{what} must be rank 4, got {:?}", s)),
    }
}

pub(crate) fn conv2d_vjp(c: &ConvArgs, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let win = &c.window;
    let (rows, cols) = (win.col_rows(), win.col_cols());
    let img = win.channels * win.height * win.width;
    let mut col = vec![0.0; rows * cols];
    let mut gx = c.x.requires_grad().then(|| vec![0.0; c.x.numel()]);
    let mut gw = c.w.requires_grad().then(|| vec![0.0; c.w.numel()]);
    let mut gcol = vec![0.0; rows * cols];
    for b in 0..c.batch {
        let gout = &g[b * c.filters * cols..(b + 1) * c.filters * cols];
        if let Some(gw) = gw.as_mut() {
            im2col(&c.x.data()[b * img..(b + 1) * img], win, &mut col);
            mm_bt_acc(gout, &col, gw, c.filters, cols, rows);
        }
        if let Some(gx) = gx.as_mut() {
            gcol.iter_mut().for_each(|v| *v = 0.0);
            mm_at_acc(c.w.data(), gout, &mut gcol, rows, c.filters, cols);
            col2im(&gcol, win, &mut gx[b * img..(b + 1) * img]);
        }
    }
    vec![gx, gw]
}

pub(crate) fn conv_transpose2d_vjp(c: &ConvArgs, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    // Forward was out_b = col2im(Wᵀ x_b); `window` describes the output image.
    let win = &c.window;
    let (rows, cols) = (win.col_rows(), win.col_cols());
    let out_img = win.channels * win.height * win.width;
    let in_c = c.filters;
    let mut col = vec![0.0; rows * cols];
    let mut gx = c.x.requires_grad().then(|| vec![0.0; c.x.numel()]);
    let mut gw = c.w.requires_grad().then(|| vec![0.0; c.w.numel()]);
    for b in 0..c.batch {
        im2col(&g[b * out_img..(b + 1) * out_img], win, &mut col);
        let xb = &c.x.data()[b * in_c * cols..(b + 1) * in_c * cols];
        if let Some(gx) = gx.as_mut() {
            mm_acc(c.w.data(), &col, &mut gx[b * in_c * cols..(b + 1) * in_c * cols], in_c, rows, cols);
        }
        if let Some(gw) = gw.as_mut() {
            mm_bt_acc(xb, &col, gw, in_c, cols, rows);
        }
    }
    vec![gx, gw]
}

pub(crate) fn channel_bias_vjp(x: &Tensor, b: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let channels = b.numel();
    let inner: usize = x.shape()[2..].iter().product();
    let gb = b.requires_grad().then(|| {
        let mut gb = vec![0.0; channels];
        for (i, chunk) in g.chunks(inner).enumerate() {
            gb[i % channels] += chunk.iter().sum::<f64>();
        }
        gb
    });
    vec![x.requires_grad().then(|| g.to_vec()), gb]
}

pub(crate) fn instance_norm_vjp(x: &Tensor, out: &Node, g: &[f64]) -> Vec<f64> {
    let hw: usize = x.shape()[2..].iter().product();
    let n = hw as f64;
    let mut gx = vec![0.0; g.len()];
    for ((xp, yp), (gp, dst)) in x
        .data()
        .chunks(hw)
        .zip(out.data.chunks(hw))
        .zip(g.chunks(hw).zip(gx.chunks_mut(hw)))
    {
        let mean = xp.iter().sum::<f64>() / n;
        let var = xp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / libm::sqrt(var + INSTANCE_NORM_EPS);
        let g_mean = gp.iter().sum::<f64>() / n;
        let gy_mean = gp.iter().zip(yp).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((d, gv), yv) in dst.iter_mut().zip(gp).zip(yp) {
            *d = inv * (gv - g_mean - yv * gy_mean);
        }
    }
    gx
}

impl Tensor {
    /// 2-D cross-correlation. `x: [B, C, H, W]`, `w: [F, C, kh, kw]`.
    pub fn conv2d(&self, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let [batch, channels, height, width] = expect_rank4(self, "conv2d input")?;
        let [filters, wc, kh, kw] = expect_rank4(w, "conv2d kernel")?;
        if wc != channels {
            return Err(dim_err!("conv2d: kernel expects {wc} channels, input has {channels}"));
        }
        if stride == 0 || height + 2 * pad < kh || width + 2 * pad < kw {
            return Err(dim_err!(
                "conv2d: kernel {kh}×{kw} (stride {stride}, pad {pad}) does not fit {height}×{width}"
            ));
        }
        let window = Window {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (height + 2 * pad - kh) / stride + 1,
            out_w: (width + 2 * pad - kw) / stride + 1,
        };
        let (rows, cols) = (window.col_rows(), window.col_cols());
        let img = channels * height * width;
        let mut col = vec![0.0; rows * cols];
        let mut data = vec![0.0; batch * filters * cols];
        for b in 0..batch {
            im2col(&self.data()[b * img..(b + 1) * img], &window, &mut col);
            mm_acc(
                w.data(),
                &col,
                &mut data[b * filters * cols..(b + 1) * filters * cols],
                filters,
                rows,
                cols,
            );
        }
        let shape = vec![batch, filters, window.out_h, window.out_w];
        Tensor::derived(
            "conv2d",
            data,
            shape,
            Op::Conv2d(ConvArgs { x: self.clone(), w: w.clone(), window, batch, filters }),
        )
    }

    /// Adjoint of [`Tensor::conv2d`]. `x: [B, Cin, H, W]`, `w: [Cin, Cout, kh, kw]`;
    /// output extent `(H−1)·stride − 2·pad + kh`.
    pub fn conv_transpose2d(&self, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let [batch, in_c, height, width] = expect_rank4(self, "conv_transpose2d input")?;
        let [wc, out_c, kh, kw] = expect_rank4(w, "conv_transpose2d kernel")?;
        if wc != in_c {
            return Err(dim_err!("conv_transpose2d: kernel expects {wc} channels, input has {in_c}"));
        }
        if stride == 0 || height == 0 || width == 0 {
            return Err(dim_err!("conv_transpose2d: empty input or zero stride"));
        }
        let full_h = (height - 1) * stride + kh;
        let full_w = (width - 1) * stride + kw;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(dim_err!("conv_transpose2d: padding {pad} leaves no output"));
        }
        let window = Window {
            channels: out_c,
            height: full_h - 2 * pad,
            width: full_w - 2 * pad,
            kh,
            kw,
            stride,
            pad,
            out_h: height,
            out_w: width,
        };
        let (rows, cols) = (window.col_rows(), window.col_cols());
        let out_img = out_c * window.height * window.width;
        let mut col = vec![0.0; rows * cols];
        let mut data = vec![0.0; batch * out_img];
        for b in 0..batch {
            col.iter_mut().for_each(|v| *v = 0.0);
            mm_at_acc(
                w.data(),
                &self.data()[b * in_c * cols..(b + 1) * in_c * cols],
                &mut col,
                rows,
                in_c,
                cols,
            );
            col2im(&col, &window, &mut data[b * out_img..(b + 1) * out_img]);
        }
        let shape = vec![batch, out_c, window.height, window.width];
        Tensor::derived(
            "conv_transpose2d",
            data,
            shape,
            Op::ConvTranspose2d(ConvArgs {
                x: self.clone(),
                w: w.clone(),
                window,
                batch,
                filters: in_c,
            }),
        )
    }

    /// Add `b[c]` to every element of channel `c` of a `[B, C, ...]` tensor.
    pub fn add_channel_bias(&self, b: &Tensor) -> Result<Tensor> {
        let s = self.shape();
        if s.len() < 2 || b.shape() != [s[1]] {
            return Err(dim_err!("channel bias {:?} does not match input {:?}", b.shape(), s));
        }
        let channels = s[1];
        let inner: usize = s[2..].iter().product();
        let mut data = self.data().to_vec();
        for (i, chunk) in data.chunks_mut(inner).enumerate() {
            let bias = b.data()[i % channels];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        Tensor::derived(
            "add_channel_bias",
            data,
            s.to_vec(),
            Op::ChannelBias(self.clone(), b.clone()),
        )
    }

    /// Per-sample, per-channel normalization over spatial positions (no affine).
    pub fn instance_norm(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(dim_err!("instance_norm needs [B,C,H,W], got {:?}", s));
        }
        let hw = s[2] * s[3];
        let n = hw as f64;
        let mut data = Vec::with_capacity(self.numel());
        for plane in self.data().chunks(hw) {
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / libm::sqrt(var + INSTANCE_NORM_EPS);
            data.extend(plane.iter().map(|v| (v - mean) * inv));
        }
        Tensor::derived("instance_norm", data, s.to_vec(), Op::InstanceNorm(self.clone()))
    }

    /// Expand `[B, m]` to `[B, m, H, W]`, each scalar becoming a constant plane.
    pub fn tile_planes(&self, height: usize, width: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || height == 0 || width == 0 {
            return Err(dim_err!("tile_planes: input {:?} to {height}×{width}", s));
        }
        let hw = height * width;
        let mut data = Vec::with_capacity(self.numel() * hw);
        for v in self.data() {
            data.extend(core::iter::repeat_n(*v, hw));
        }
        Tensor::derived(
            "tile_planes",
            data,
            vec![s[0], s[1], height, width],
            Op::TilePlanes(self.clone()),
        )
    }
}
