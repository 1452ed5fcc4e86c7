//! Image quality and attribute recognition metrics.
//!
//! PSNR and SSIM work on values in `[0, 1]` with peak `1.0`; images in the
//! training range `[−1, 1]` go through [`to_unit_range`] first. SSIM uses an
//! 11×11 Gaussian window with `σ = 1.5`, `C₁ = 0.01²`, `C₂ = 0.03²`, averaged
//! over every fully contained window position and then over channels.

use alloc::vec;
use alloc::vec::Vec;

use crate::cooccurrence::AttributeVector;
use crate::dataset::{label_tensor, Dataset, PixelOracle};
use crate::error::{dim_err, Error, Result};
use crate::mtl::bce_with_logits;
use crate::networks::{conv, conv_layer, linear, linear_layer, Layer, SLOPE};
use crate::params::{Adam, AdamConfig, Bound, ParamStore};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Map `[−1, 1]` to `[0, 1]`.
pub fn to_unit_range(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| (v + 1.0) / 2.0).collect()
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` images, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(dim_err!("psnr of {} vs {} values", a.len(), b.len()));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * libm::log10(1.0 / mse)).min(PSNR_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ssim {
    pub value: f64,
    /// Window side actually used.
    pub window: usize,
    /// The image was smaller than the standard window.
    pub reduced: bool,
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut w = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d = (y as f64 - c) * (y as f64 - c) + (x as f64 - c) * (x as f64 - c);
            w.push(libm::exp(-d / (2.0 * sigma * sigma)));
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, win: &[f64], ws: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - ws {
        for x0 in 0..=w - ws {
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..ws {
                for dx in 0..ws {
                    let g = win[dy * ws + dx];
                    let i = (y0 + dy) * w + x0 + dx;
                    ma += g * a[i];
                    mb += g * b[i];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..ws {
                for dx in 0..ws {
                    let g = win[dy * ws + dx];
                    let i = (y0 + dy) * w + x0 + dx;
                    let (da, db) = (a[i] - ma, b[i] - mb);
                    va += g * da * da;
                    vb += g * db * db;
                    cov += g * (da * db);
                }
            }
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

/// Mean SSIM of two `channels×h×w` images in `[0, 1]`. Images smaller than
/// the window use the largest odd window that fits, with `σ` scaled alike.
pub fn ssim(a: &[f64], b: &[f64], channels: usize, h: usize, w: usize) -> Result<Ssim> {
    let n = channels * h * w;
    if a.len() != n || b.len() != n || n == 0 {
        return Err(dim_err!("ssim expects {channels}×{h}×{w}, got {} and {}", a.len(), b.len()));
    }
    let mut ws = SSIM_WINDOW.min(h).min(w);
    if ws.is_multiple_of(2) {
        ws -= 1;
    }
    let reduced = ws < SSIM_WINDOW;
    let win = gaussian_window(ws, SSIM_SIGMA * ws as f64 / SSIM_WINDOW as f64);
    let plane = h * w;
    let value = (0..channels)
        .map(|c| ssim_plane(&a[c * plane..(c + 1) * plane], &b[c * plane..(c + 1) * plane], h, w, &win, ws))
        .sum::<f64>()
        / channels as f64;
    Ok(Ssim { value, window: ws, reduced })
}

/// Mean PSNR and SSIM over paired `[B, 3, S, S]` batches in `[−1, 1]`.
pub fn batch_quality(a: &Tensor, b: &Tensor) -> Result<(f64, f64)> {
    if a.shape() != b.shape() || a.shape().len() != 4 {
        return Err(dim_err!("quality of {:?} vs {:?}", a.shape(), b.shape()));
    }
    let s = a.shape();
    let per = s[1] * s[2] * s[3];
    let (mut p, mut q) = (0.0, 0.0);
    for i in 0..s[0] {
        let x = to_unit_range(&a.data()[i * per..(i + 1) * per]);
        let y = to_unit_range(&b.data()[i * per..(i + 1) * per]);
        p += psnr(&x, &y)?;
        q += ssim(&x, &y, s[1], s[2], s[3])?.value;
    }
    Ok((p / s[0] as f64, q / s[0] as f64))
}

/// Reads attributes off a batch of images.
pub trait AttributePredictor {
    fn predict(&self, images: &Tensor) -> Result<Vec<AttributeVector>>;
}

impl AttributePredictor for PixelOracle {
    fn predict(&self, images: &Tensor) -> Result<Vec<AttributeVector>> {
        let per = 3 * self.image_size * self.image_size;
        images.data().chunks(per).map(|img| self.read(img)).collect()
    }
}

/// Which attributes of each generated image are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TarrScope {
    /// Only attributes whose target differs from the source.
    Changed,
    /// Every attribute.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TarrReport {
    /// Fraction of scored images whose prediction equals the target; `None`
    /// when nothing was scored for that attribute.
    pub per_attribute: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Mean over attributes that were scored.
    pub mean: Option<f64>,
}

/// Target attribute recognition rate of generated `images` (`[N, 3, S, S]`).
pub fn tarr<P: AttributePredictor + ?Sized>(
    images: &Tensor,
    targets: &[AttributeVector],
    sources: &[AttributeVector],
    predictor: &P,
    scope: TarrScope,
) -> Result<TarrReport> {
    if targets.len() != sources.len() || images.shape().first() != Some(&targets.len()) {
        return Err(dim_err!(
            "{:?} images, {} targets, {} sources",
            images.shape(),
            targets.len(),
            sources.len()
        ));
    }
    let k = targets.first().map_or(0, AttributeVector::len);
    let preds = predictor.predict(images)?;
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for ((p, t), s) in preds.iter().zip(targets).zip(sources) {
        for i in 0..k {
            if scope == TarrScope::All || t.get(i) != s.get(i) {
                counts[i] += 1;
                if p.get(i) == t.get(i) {
                    hits[i] += 1;
                }
            }
        }
    }
    let per_attribute: Vec<Option<f64>> = hits
        .iter()
        .zip(&counts)
        .map(|(h, c)| (*c > 0).then(|| *h as f64 / *c as f64))
        .collect();
    let scored: Vec<f64> = per_attribute.iter().flatten().copied().collect();
    let mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    Ok(TarrReport { per_attribute, counts, mean })
}

pub const CLASSIFIER_PREFIX: &str = "refclf.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub width: usize,
    pub feature_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { width: 8, feature_dim: 32, steps: 300, batch: 32, lr: 1e-3 }
    }
}

/// Small convolutional attribute classifier trained on real images only.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceClassifier {
    pub config: ClassifierConfig,
    pub image_size: usize,
    pub k: usize,
    pub store: ParamStore,
    convs: [Layer; 3],
    fc: Layer,
    /// `w: [k, feature_dim]`.
    head: Layer,
}

impl ReferenceClassifier {
    pub fn new(image_size: usize, k: usize, config: ClassifierConfig, seed: u64) -> Result<Self> {
        if !image_size.is_multiple_of(8) || image_size == 0 {
            return Err(Error::Config(alloc::format!("classifier needs a multiple of 8, got {image_size}")));
        }
        let mut store = ParamStore::new();
        let mut r = rng::derive(seed, Stream::Classifier, 0);
        let c = config.width;
        let n = |s: &str| alloc::format!("{CLASSIFIER_PREFIX}{s}");
        let convs = [
            conv_layer(&mut store, &n("conv0"), c, 3, 4, &mut r)?,
            conv_layer(&mut store, &n("conv1"), 2 * c, c, 4, &mut r)?,
            conv_layer(&mut store, &n("conv2"), 4 * c, 2 * c, 4, &mut r)?,
        ];
        let side = image_size / 8;
        let flat = 4 * c * side * side;
        let fc = linear_layer(&mut store, &n("fc"), flat, config.feature_dim, libm::sqrt(2.0 / flat as f64), &mut r)?;
        let head = Layer {
            w: store.add_normal(
                &n("head.w"),
                &[k, config.feature_dim],
                libm::sqrt(1.0 / config.feature_dim as f64),
                &mut r,
            )?,
            b: store.add_zeros(&n("head.b"), &[k])?,
        };
        Ok(Self { config, image_size, k, store, convs, fc, head })
    }

    /// Rebuild with stored values (e.g. from a checkpoint).
    pub fn with_store(mut self, store: ParamStore) -> Result<Self> {
        if store.len() != self.store.len()
            || store.entries().iter().zip(self.store.entries()).any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::Contract(alloc::string::String::from(
                "stored classifier parameters do not match the architecture",
            )));
        }
        self.store = store;
        Ok(self)
    }

    /// Penultimate `[B, feature_dim]` activations.
    pub fn features(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.convs {
            h = conv(&h, l, p, 2, 1)?.leaky_relu(SLOPE)?;
        }
        let b = h.shape()[0];
        let h = h.reshape(&[b, h.numel() / b])?;
        linear(&h, &self.fc, p)?.leaky_relu(SLOPE)
    }

    pub fn logits(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        self.features(p, x)?.matmul(&p.get(self.head.w).t()?)?.add_channel_bias(p.get(self.head.b))
    }

    /// Final-layer weight rows, `k × feature_dim`, one per attribute.
    pub fn head_rows(&self) -> &[f64] {
        &self.store.entry(self.head.w).value
    }

    /// Minimize mean BCE on `data` with Adam; returns the per-step losses.
    pub fn train(&mut self, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
        let ids: Vec<_> = self.store.ids().collect();
        let mut opt = Adam::new(AdamConfig { lr: self.config.lr, beta1: 0.9, ..AdamConfig::default() });
        let mut history = Vec::with_capacity(self.config.steps);
        for step in 0..self.config.steps {
            let mut r = rng::derive(seed, Stream::Classifier, 1 + step as u64);
            let idx = data.sample_indices(self.config.batch, &mut r);
            let (x, attrs) = data.batch(&idx)?;
            let labels = label_tensor(&attrs)?;
            let bound = self.store.bind(|_| true)?;
            let loss = bce_with_logits(&self.logits(&bound, &x)?, &labels)?;
            loss.backward()?;
            self.store.zero_grads();
            self.store.accumulate(&bound, 1.0);
            opt.update(&mut self.store, &ids);
            history.push(loss.item()?);
        }
        Ok(history)
    }

    /// Per-attribute accuracy over a whole dataset.
    pub fn accuracy(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut hits = vec![0usize; self.k];
        let all: Vec<usize> = (0..data.len()).collect();
        for chunk in all.chunks(64) {
            let (x, attrs) = data.batch(chunk)?;
            for (p, a) in self.predict(&x)?.iter().zip(&attrs) {
                for (i, h) in hits.iter_mut().enumerate() {
                    if p.get(i) == a.get(i) {
                        *h += 1;
                    }
                }
            }
        }
        Ok(hits.iter().map(|h| *h as f64 / data.len() as f64).collect())
    }
}

impl AttributePredictor for ReferenceClassifier {
    fn predict(&self, images: &Tensor) -> Result<Vec<AttributeVector>> {
        let bound = self.store.bind(|_| false)?;
        let logits = self.logits(&bound, images)?;
        Ok(logits
            .data()
            .chunks(self.k)
            .map(|row| AttributeVector::from_bools(&row.iter().map(|z| *z > 0.0).collect::<Vec<_>>()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_range, SyntheticSpec};
    use crate::rng::Rng;

    fn noise(r: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng::uniform(r)).collect()
    }

    #[test]
    fn psnr_examples() {
        let a = vec![0.3; 100];
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &b[..99]).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut r = rng::derive(1, Stream::Eval, 0);
        for (h, w) in [(16, 16), (32, 20), (7, 9)] {
            let a = noise(&mut r, 3 * h * w);
            assert_eq!(ssim(&a, &a, 3, h, w).unwrap().value, 1.0);
        }
    }

    #[test]
    fn ssim_of_independent_noise_is_near_zero() {
        let mut r = rng::derive(2, Stream::Eval, 0);
        let a: Vec<f64> = noise(&mut r, 64 * 64);
        let b: Vec<f64> = noise(&mut r, 64 * 64);
        let s = ssim(&a, &b, 1, 64, 64).unwrap();
        assert!(s.value.abs() < 0.1, "{}", s.value);
        assert!(!s.reduced);
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let (ma, mb) = (0.2, 0.7);
        let s = ssim(&[ma; 256], &[mb; 256], 1, 16, 16).unwrap().value;
        let expect = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_falls_back_on_small_images() {
        let mut r = rng::derive(3, Stream::Eval, 0);
        let a = noise(&mut r, 300);
        let b = noise(&mut r, 300);
        let ab = ssim(&a, &b, 3, 10, 10).unwrap();
        let ba = ssim(&b, &a, 3, 10, 10).unwrap();
        assert_eq!(ab.value, ba.value);
        assert!(ab.reduced);
        assert_eq!(ab.window, 9);
    }

    #[test]
    fn metrics_consistent_under_joint_offset() {
        let mut r = rng::derive(4, Stream::Eval, 0);
        let a: Vec<f64> = noise(&mut r, 3 * 256).iter().map(|v| 0.2 + 0.5 * v).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 0.05 * (rng::uniform(&mut r) - 0.5)).collect();
        let shift = |v: &[f64]| v.iter().map(|x| x + 0.1).collect::<Vec<_>>();
        let p0 = psnr(&a, &b).unwrap();
        let p1 = psnr(&shift(&a), &shift(&b)).unwrap();
        assert!((p0 - p1).abs() < 1e-9);
        let s0 = ssim(&a, &b, 3, 16, 16).unwrap().value;
        let s1 = ssim(&shift(&a), &shift(&b), 3, 16, 16).unwrap().value;
        assert!((s0 - s1).abs() < 0.01);
    }

    struct Fixed(Vec<AttributeVector>);

    impl AttributePredictor for Fixed {
        fn predict(&self, _: &Tensor) -> Result<Vec<AttributeVector>> {
            Ok(self.0.clone())
        }
    }

    fn av(v: &[u8]) -> AttributeVector {
        AttributeVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn tarr_scores_changed_attributes() {
        let images = Tensor::zeros(&[3, 1]);
        let sources = vec![av(&[0, 0]), av(&[0, 0]), av(&[1, 1])];
        let targets = vec![av(&[1, 0]), av(&[1, 0]), av(&[1, 1])];
        let preds = Fixed(vec![av(&[1, 1]), av(&[0, 0]), av(&[0, 0])]);
        let rep = tarr(&images, &targets, &sources, &preds, TarrScope::Changed).unwrap();
        assert_eq!(rep.per_attribute, vec![Some(0.5), None]);
        assert_eq!(rep.mean, Some(0.5));
        let all = tarr(&images, &targets, &sources, &preds, TarrScope::All).unwrap();
        assert_eq!(all.counts, vec![3, 3]);
    }

    #[test]
    fn oracle_tarr_is_perfect_on_rendered_targets() {
        let spec = SyntheticSpec { image_size: 16, ..SyntheticSpec::default() };
        let samples = generate_range(&spec, 1, 0, 40).unwrap();
        let sources: Vec<_> = samples.iter().map(|s| s.attributes.clone()).collect();
        let mut r = rng::derive(5, Stream::Target, 0);
        let targets: Vec<_> = (0..40).map(|_| spec.sample_attributes(&mut r)).collect();
        let data: Vec<f64> = targets.iter().flat_map(|t| spec.render(t, (0, 0), 1)).collect();
        let images = Tensor::new(data, &[40, 3, 16, 16]).unwrap();
        let rep = tarr(&images, &targets, &sources, &PixelOracle { image_size: 16 }, TarrScope::Changed).unwrap();
        assert_eq!(rep.mean, Some(1.0));
    }
}
