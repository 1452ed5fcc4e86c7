//! Procedural attribute images with a planted co-occurrence structure.
//!
//! Four attributes, each with a fixed drawing rule on a square RGB canvas in
//! `[−1, 1]`:
//!
//! | index | name         | effect                                              |
//! |-------|--------------|-----------------------------------------------------|
//! | 0     | `bright_bg`  | background `+0.5` instead of `−0.5`                 |
//! | 1     | `disk`       | centered disk of radius `S/4`, jittered by ±1 px     |
//! | 2     | `stripe`     | blue band across the top rows                       |
//! | 3     | `disk_color` | the disk is red instead of gray                     |
//!
//! Attributes are drawn one after another from a Bayesian chain: each node
//! lists earlier attributes as parents and a probability per parent
//! configuration. The planted `C` follows by enumerating the joint.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::cooccurrence::{AttributeVector, CooccurrenceMatrix};
use crate::error::{dim_err, Error, Result};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

pub const BRIGHT_BG: usize = 0;
pub const DISK: usize = 1;
pub const STRIPE: usize = 2;
pub const DISK_COLOR: usize = 3;

pub const ATTRIBUTE_NAMES: [&str; 4] = ["bright_bg", "disk", "stripe", "disk_color"];

const BG_BRIGHT: f64 = 0.5;
const BG_DARK: f64 = -0.5;
const GRAY: [f64; 3] = [0.0, 0.0, 0.0];
const RED: [f64; 3] = [0.9, -0.9, -0.9];
const BLUE: [f64; 3] = [-0.9, -0.9, 0.9];

/// One attribute of the sampling chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNode {
    /// Indices of earlier attributes this one depends on.
    pub parents: Vec<usize>,
    /// `P(on | parents)`, indexed by the parent values read as bits
    /// (first parent = lowest bit).
    pub probs: Vec<f64>,
}

impl ChainNode {
    pub fn marginal(p: f64) -> Self {
        Self { parents: Vec::new(), probs: vec![p] }
    }

    pub fn conditional(parent: usize, off: f64, on: f64) -> Self {
        Self { parents: vec![parent], probs: vec![off, on] }
    }

    fn prob(&self, values: &[bool]) -> f64 {
        let idx = self
            .parents
            .iter()
            .enumerate()
            .fold(0usize, |acc, (bit, &p)| acc | (usize::from(values[p]) << bit));
        self.probs[idx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub chain: Vec<ChainNode>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 32,
            chain: vec![
                ChainNode::marginal(0.5),
                ChainNode::marginal(0.6),
                // stripes almost never appear on a bright background
                ChainNode::conditional(BRIGHT_BG, 0.7, 0.02),
                // color needs a disk
                ChainNode::conditional(DISK, 0.0, 0.9),
            ],
        }
    }
}

impl SyntheticSpec {
    pub fn k(&self) -> usize {
        self.chain.len()
    }

    pub fn names(&self) -> Vec<String> {
        ATTRIBUTE_NAMES.iter().map(|s| String::from(*s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.chain.len() != ATTRIBUTE_NAMES.len() {
            return Err(Error::Dataset(alloc::format!(
                "the chain must have {} nodes, got {}",
                ATTRIBUTE_NAMES.len(),
                self.chain.len()
            )));
        }
        if self.image_size < 16 || !self.image_size.is_multiple_of(8) {
            return Err(Error::Dataset(alloc::format!(
                "image size must be a multiple of 8 and at least 16, got {}",
                self.image_size
            )));
        }
        for (i, node) in self.chain.iter().enumerate() {
            if node.parents.iter().any(|p| *p >= i) {
                return Err(Error::Dataset(alloc::format!("node {i} has a parent that is not earlier")));
            }
            if node.probs.len() != 1 << node.parents.len() {
                return Err(Error::Dataset(alloc::format!(
                    "node {i} needs {} probabilities, got {}",
                    1usize << node.parents.len(),
                    node.probs.len()
                )));
            }
            if node.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Dataset(alloc::format!("node {i} has a probability outside [0,1]")));
            }
        }
        // a colored disk without a disk cannot be drawn
        let mut joint_ok = true;
        for (values, p) in self.joint() {
            if p > 0.0 && values[DISK_COLOR] && !values[DISK] {
                joint_ok = false;
            }
        }
        if !joint_ok {
            return Err(Error::Dataset(String::from("disk_color can be on while disk is off")));
        }
        Ok(())
    }

    /// Every attribute configuration with its probability.
    pub fn joint(&self) -> Vec<(Vec<bool>, f64)> {
        let k = self.k();
        (0..1usize << k)
            .map(|mask| {
                let values: Vec<bool> = (0..k).map(|i| mask >> i & 1 == 1).collect();
                let p = self.chain.iter().enumerate().fold(1.0, |acc, (i, node)| {
                    let on = node.prob(&values);
                    acc * if values[i] { on } else { 1.0 - on }
                });
                (values, p)
            })
            .collect()
    }

    /// Exact `C[i][j] = P(a_i | a_j)` of the chain.
    pub fn planted_cooccurrence(&self) -> Result<CooccurrenceMatrix> {
        self.validate()?;
        let k = self.k();
        let mut both = vec![0.0; k * k];
        for (values, p) in self.joint() {
            for i in 0..k {
                for j in 0..k {
                    if values[i] && values[j] {
                        both[i * k + j] += p;
                    }
                }
            }
        }
        let mut c = vec![0.0; k * k];
        for j in 0..k {
            let support = both[j * k + j];
            if support <= 0.0 {
                return Err(Error::Dataset(alloc::format!(
                    "attribute `{}` has probability zero",
                    ATTRIBUTE_NAMES[j]
                )));
            }
            for i in 0..k {
                c[i * k + j] = both[i * k + j] / support;
            }
        }
        CooccurrenceMatrix::from_conditional(self.names(), c)
    }

    /// Ancestral sample of one attribute vector.
    pub fn sample_attributes(&self, r: &mut Rng) -> AttributeVector {
        let mut values = vec![false; self.k()];
        for (i, node) in self.chain.iter().enumerate() {
            values[i] = rng::uniform(r) < node.prob(&values);
        }
        AttributeVector::from_bools(&values)
    }

    fn disk_radius(&self) -> usize {
        self.image_size / 4
    }

    fn stripe_height(&self) -> usize {
        (self.image_size / 8).max(2)
    }

    /// Draw `attrs` on a `3×S×S` canvas. `jitter` shifts the disk center
    /// and `stripe_offset` the band, both as drawn by [`generate_dataset`].
    pub fn render(&self, attrs: &AttributeVector, jitter: (i64, i64), stripe_offset: usize) -> Vec<f64> {
        let s = self.image_size;
        let bg = if attrs.get(BRIGHT_BG) { BG_BRIGHT } else { BG_DARK };
        let mut img = vec![bg; 3 * s * s];
        let mut paint = |y: usize, x: usize, rgb: &[f64; 3]| {
            for (c, v) in rgb.iter().enumerate() {
                img[c * s * s + y * s + x] = *v;
            }
        };
        if attrs.get(DISK) {
            let rgb = if attrs.get(DISK_COLOR) { &RED } else { &GRAY };
            let cy = (s / 2) as i64 + jitter.0;
            let cx = (s / 2) as i64 + jitter.1;
            let r = self.disk_radius() as i64;
            for y in 0..s {
                for x in 0..s {
                    let (dy, dx) = (y as i64 - cy, x as i64 - cx);
                    if dy * dy + dx * dx <= r * r {
                        paint(y, x, rgb);
                    }
                }
            }
        }
        if attrs.get(STRIPE) {
            for y in stripe_offset..stripe_offset + self.stripe_height() {
                for x in 0..s {
                    paint(y, x, &BLUE);
                }
            }
        }
        img
    }
}

/// One rendered image and its attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `3×S×S`, row-major per channel, values in `[−1, 1]`.
    pub image: Vec<f64>,
    pub attributes: AttributeVector,
}

/// Sample number `index` of the stream seeded by `seed`.
pub fn generate_sample(spec: &SyntheticSpec, seed: u64, index: u64) -> Sample {
    let mut r = rng::derive(seed, Stream::Data, index);
    let attributes = spec.sample_attributes(&mut r);
    let jitter = (rng::below(&mut r, 3) as i64 - 1, rng::below(&mut r, 3) as i64 - 1);
    let stripe_offset = rng::below(&mut r, 2);
    Sample {
        id: alloc::format!("{index:06}.png"),
        image: spec.render(&attributes, jitter, stripe_offset),
        attributes,
    }
}

/// Samples `start..start + n`. Each sample depends only on `(seed, index)`.
pub fn generate_range(spec: &SyntheticSpec, seed: u64, start: u64, n: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    Ok((0..n as u64).map(|i| generate_sample(spec, seed, start + i)).collect())
}

pub fn generate_dataset(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Contract(String::from("dataset size must be at least 1")));
    }
    generate_range(spec, seed, 0, n)
}

/// Rule-based attribute reader for rendered images (not learned).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelOracle {
    pub image_size: usize,
}

impl PixelOracle {
    pub fn read(&self, image: &[f64]) -> Result<AttributeVector> {
        let s = self.image_size;
        if image.len() != 3 * s * s {
            return Err(dim_err!("oracle for {s}×{s} images got {} values", image.len()));
        }
        let px = |c: usize, y: usize, x: usize| image[c * s * s + y * s + x];
        let region_mean = |c: usize, ys: core::ops::Range<usize>, xs: core::ops::Range<usize>| {
            let n = (ys.len() * xs.len()) as f64;
            let mut total = 0.0;
            for y in ys {
                for x in xs.clone() {
                    total += px(c, y, x);
                }
            }
            total / n
        };
        let corner: Vec<f64> = (0..3).map(|c| region_mean(c, s - 2..s, 0..2)).collect();
        let center: Vec<f64> = (0..3).map(|c| region_mean(c, s / 2 - 1..s / 2 + 1, s / 2 - 1..s / 2 + 1)).collect();
        // row 1 is covered by the band at either offset
        let band_blue = region_mean(2, 1..2, 0..s) - region_mean(0, 1..2, 0..s);

        let bright = corner.iter().sum::<f64>() / 3.0 > 0.0;
        let disk = center.iter().zip(&corner).any(|(a, b)| (a - b).abs() > 0.25);
        let stripe = band_blue > 0.9;
        let color = disk && center[0] - center[1] > 0.9;
        Ok(AttributeVector::from_bools(&[bright, disk, stripe, color]))
    }
}

/// How target attribute vectors are chosen for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetPolicy {
    /// Flip one uniformly chosen attribute.
    FlipOne,
    /// Draw afresh from the planted joint.
    RandomResample,
    /// Take the attributes of another image in the batch.
    PermuteBatch,
}

impl TargetPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetPolicy::FlipOne => "flip_one",
            TargetPolicy::RandomResample => "random_resample",
            TargetPolicy::PermuteBatch => "permute_batch",
        }
    }
}

impl fmt::Display for TargetPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [TargetPolicy::FlipOne, TargetPolicy::RandomResample, TargetPolicy::PermuteBatch]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown target policy `{s}`")))
    }
}

pub fn sample_target(s: &AttributeVector, policy: TargetPolicy, spec: &SyntheticSpec, r: &mut Rng) -> AttributeVector {
    match policy {
        TargetPolicy::FlipOne | TargetPolicy::PermuteBatch => {
            let mut t = s.clone();
            let i = rng::below(r, s.len());
            t.set(i, !s.get(i));
            t
        }
        TargetPolicy::RandomResample => spec.sample_attributes(r),
    }
}

/// Targets for a whole batch. `PermuteBatch` shuffles the batch's own
/// attribute vectors; the other policies act per sample.
pub fn sample_targets(
    sources: &[AttributeVector],
    policy: TargetPolicy,
    spec: &SyntheticSpec,
    r: &mut Rng,
) -> Vec<AttributeVector> {
    match policy {
        TargetPolicy::PermuteBatch => {
            let mut t = sources.to_vec();
            rng::shuffle(r, &mut t);
            t
        }
        _ => sources.iter().map(|s| sample_target(s, policy, spec, r)).collect(),
    }
}

/// Images and annotations held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub image_size: usize,
    pub ids: Vec<String>,
    /// All images back to back, `3×S×S` each.
    pub pixels: Vec<f64>,
    pub attributes: Vec<AttributeVector>,
}

impl Dataset {
    pub fn from_samples(names: Vec<String>, image_size: usize, samples: Vec<Sample>) -> Result<Self> {
        let per = 3 * image_size * image_size;
        let mut out = Self {
            names,
            image_size,
            ids: Vec::with_capacity(samples.len()),
            pixels: Vec::with_capacity(samples.len() * per),
            attributes: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            if s.image.len() != per {
                return Err(dim_err!("sample `{}` has {} values, expected {per}", s.id, s.image.len()));
            }
            if s.attributes.len() != out.names.len() {
                return Err(dim_err!("sample `{}` has {} attributes", s.id, s.attributes.len()));
            }
            out.ids.push(s.id);
            out.pixels.extend_from_slice(&s.image);
            out.attributes.push(s.attributes);
        }
        Ok(out)
    }

    pub fn synthetic(spec: &SyntheticSpec, seed: u64, start: u64, n: usize) -> Result<Self> {
        Self::from_samples(spec.names(), spec.image_size, generate_range(spec, seed, start, n)?)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image_len(&self) -> usize {
        3 * self.image_size * self.image_size
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// `[B, 3, S, S]` images and their attributes for the given indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<AttributeVector>)> {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        let mut attrs = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(alloc::format!("index {i} out of {} samples", self.len())));
            }
            data.extend_from_slice(self.image(i));
            attrs.push(self.attributes[i].clone());
        }
        let s = self.image_size;
        Ok((Tensor::new(data, &[indices.len(), 3, s, s])?, attrs))
    }

    /// `batch` random indices drawn with replacement.
    pub fn sample_indices(&self, batch: usize, r: &mut Rng) -> Vec<usize> {
        (0..batch).map(|_| rng::below(r, self.len())).collect()
    }
}

/// `[B, k]` tensor of 0/1 labels.
pub fn label_tensor(attrs: &[AttributeVector]) -> Result<Tensor> {
    let k = attrs.first().map_or(0, AttributeVector::len);
    let data: Vec<f64> = attrs.iter().flat_map(AttributeVector::as_f64).collect();
    if data.len() != k * attrs.len() {
        return Err(dim_err!("ragged attribute vectors"));
    }
    Tensor::new(data, &[attrs.len(), k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cooccurrence::build_cooccurrence;

    fn spec16() -> SyntheticSpec {
        SyntheticSpec { image_size: 16, ..SyntheticSpec::default() }
    }

    #[test]
    fn planted_matrix_has_designed_extremes() {
        let c = SyntheticSpec::default().planted_cooccurrence().unwrap();
        assert!((c.get(DISK_COLOR, DISK) - 0.9).abs() < 1e-15);
        assert!((c.get(DISK, DISK_COLOR) - 1.0).abs() < 1e-15);
        assert!((c.get(STRIPE, BRIGHT_BG) - 0.02).abs() < 1e-15);
        for i in 0..4 {
            assert!((c.get(i, i) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unrealizable_chains_are_rejected() {
        let mut bad = SyntheticSpec::default();
        bad.chain[DISK_COLOR] = ChainNode::conditional(DISK, 0.3, 0.9);
        assert!(matches!(bad.planted_cooccurrence(), Err(Error::Dataset(_))));
        let mut never = SyntheticSpec::default();
        never.chain[STRIPE] = ChainNode::marginal(0.0);
        assert!(matches!(never.planted_cooccurrence(), Err(Error::Dataset(_))));
        let mut order = SyntheticSpec::default();
        order.chain[BRIGHT_BG] = ChainNode::conditional(DISK, 0.5, 0.5);
        assert!(order.validate().is_err());
        assert!(generate_dataset(&SyntheticSpec::default(), 0, 1).is_err());
    }

    #[test]
    fn empirical_cooccurrence_converges() {
        let spec = spec16();
        let data = generate_dataset(&spec, 10_000, 7).unwrap();
        let attrs: Vec<_> = data.into_iter().map(|s| s.attributes).collect();
        let c = build_cooccurrence(&spec.names(), &attrs).unwrap();
        assert!((c.get(DISK_COLOR, DISK) - 0.9).abs() < 0.02, "{}", c.get(DISK_COLOR, DISK));
    }

    #[test]
    fn absent_disk_leaves_background() {
        let spec = spec16();
        let attrs = AttributeVector::new(vec![1, 0, 0, 0]).unwrap();
        let img = spec.render(&attrs, (1, -1), 0);
        assert!(img.iter().all(|v| *v == BG_BRIGHT));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_dataset(&spec16(), 50, 3).unwrap();
        let b = generate_dataset(&spec16(), 50, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec16(), 50, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn oracle_reads_every_configuration() {
        for size in [16, 32, 64] {
            let spec = SyntheticSpec { image_size: size, ..SyntheticSpec::default() };
            let oracle = PixelOracle { image_size: size };
            for (values, p) in spec.joint() {
                if p == 0.0 {
                    continue;
                }
                let attrs = AttributeVector::from_bools(&values);
                for jy in -1..=1 {
                    for jx in -1..=1 {
                        for off in 0..2 {
                            let img = spec.render(&attrs, (jy, jx), off);
                            assert_eq!(oracle.read(&img).unwrap(), attrs);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_agrees_with_generated_samples() {
        let spec = spec16();
        let oracle = PixelOracle { image_size: 16 };
        for s in generate_dataset(&spec, 500, 11).unwrap() {
            assert_eq!(oracle.read(&s.image).unwrap(), s.attributes);
        }
    }

    #[test]
    fn flip_one_changes_exactly_one() {
        let spec = spec16();
        let mut r = rng::derive(1, Stream::Target, 0);
        let s = AttributeVector::new(vec![1, 0, 0, 0]).unwrap();
        for _ in 0..100 {
            let t = sample_target(&s, TargetPolicy::FlipOne, &spec, &mut r);
            assert_eq!(t.hamming(&s), 1);
        }
    }

    #[test]
    fn permute_batch_preserves_marginals() {
        let spec = spec16();
        let mut r = rng::derive(2, Stream::Target, 0);
        let sources: Vec<_> = (0..64).map(|_| spec.sample_attributes(&mut r)).collect();
        let targets = sample_targets(&sources, TargetPolicy::PermuteBatch, &spec, &mut r);
        let mut a = sources.clone();
        let mut b = targets.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn resampled_targets_follow_planted_matrix() {
        let spec = spec16();
        let planted = spec.planted_cooccurrence().unwrap();
        let mut r = rng::derive(3, Stream::Target, 0);
        let s = AttributeVector::new(vec![0, 0, 0, 0]).unwrap();
        let sources = vec![s; 10_000];
        let targets = sample_targets(&sources, TargetPolicy::RandomResample, &spec, &mut r);
        let c = build_cooccurrence(&spec.names(), &targets).unwrap();
        for (a, b) in c.c.iter().zip(&planted.c) {
            assert!((a - b).abs() < 0.03, "{a} vs {b}");
        }
    }

    #[test]
    fn batches_stack_images() {
        let d = Dataset::synthetic(&spec16(), 5, 0, 10).unwrap();
        let (x, attrs) = d.batch(&[3, 3, 7]).unwrap();
        assert_eq!(x.shape(), &[3, 3, 16, 16]);
        assert_eq!(&x.data()[..768], d.image(3));
        assert_eq!(attrs[2], d.attributes[7]);
        assert!(d.batch(&[10]).is_err());
        let labels = label_tensor(&attrs).unwrap();
        assert_eq!(labels.shape(), &[3, 4]);
    }

    #[test]
    fn ranges_are_index_addressed() {
        let all = generate_range(&spec16(), 9, 0, 20).unwrap();
        let tail = generate_range(&spec16(), 9, 15, 5).unwrap();
        assert_eq!(&all[15..], &tail[..]);
    }
}
