//! Generator and discriminator.
//!
//! The generator is a small encoder/decoder: three stride-2 convolutions
//! down, a fully connected bottleneck, two stride-1 convolutions, and three
//! stride-2 transpose convolutions up to a `tanh` image, with the first two
//! encoder outputs concatenated onto the matching decoder inputs. The condition is
//! injected either as constant planes next to the input image (encoder) or
//! as a flat vector concatenated with the bottleneck latent (decoder).
//!
//! The discriminator shares four convolutions (`disc.trunk.*`) between a
//! scalar critic head (`disc.critic.*`) and a per-attribute classifier head
//! (`disc.cls.*`, one weight row per attribute).

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::condition::{inject_decoder, inject_encoder, ConditionMatrix};
use crate::error::{dim_err, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const SLOPE: f64 = 0.2;
pub const GENERATOR_PREFIX: &str = "generator.";
pub const DISC_PREFIX: &str = "disc.";
pub const CLS_WEIGHT: &str = "disc.cls.w";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    Encoder,
    Decoder,
}

impl fmt::Display for Injection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Injection::Encoder => "encoder",
            Injection::Decoder => "decoder",
        })
    }
}

impl FromStr for Injection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Injection::Encoder),
            "decoder" => Ok(Injection::Decoder),
            _ => Err(Error::Config(alloc::format!("unknown injection mode `{s}`"))),
        }
    }
}

/// A weight/bias pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub w: ParamId,
    pub b: ParamId,
}

fn kaiming(fan_in: usize) -> f64 {
    libm::sqrt(2.0 / fan_in as f64)
}

pub(crate) fn conv_layer(
    store: &mut ParamStore,
    name: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
    r: &mut Rng,
) -> Result<Layer> {
    let w = store.add_normal(&alloc::format!("{name}.w"), &[out_c, in_c, k, k], kaiming(in_c * k * k), r)?;
    let b = store.add_zeros(&alloc::format!("{name}.b"), &[out_c])?;
    Ok(Layer { w, b })
}

fn tconv_layer(
    store: &mut ParamStore,
    name: &str,
    in_c: usize,
    out_c: usize,
    r: &mut Rng,
) -> Result<Layer> {
    // each output pixel of a stride-2, 4×4 transpose conv sees in_c·4 taps
    let w = store.add_normal(&alloc::format!("{name}.w"), &[in_c, out_c, 4, 4], kaiming(in_c * 4), r)?;
    let b = store.add_zeros(&alloc::format!("{name}.b"), &[out_c])?;
    Ok(Layer { w, b })
}

/// `w: [in, out]`, `b: [out]`.
pub(crate) fn linear_layer(
    store: &mut ParamStore,
    name: &str,
    in_f: usize,
    out_f: usize,
    std: f64,
    r: &mut Rng,
) -> Result<Layer> {
    let w = store.add_normal(&alloc::format!("{name}.w"), &[in_f, out_f], std, r)?;
    let b = store.add_zeros(&alloc::format!("{name}.b"), &[out_f])?;
    Ok(Layer { w, b })
}

pub(crate) fn conv(x: &Tensor, l: &Layer, p: &Bound, stride: usize, pad: usize) -> Result<Tensor> {
    x.conv2d(p.get(l.w), stride, pad)?.add_channel_bias(p.get(l.b))
}

fn tconv(x: &Tensor, l: &Layer, p: &Bound) -> Result<Tensor> {
    x.conv_transpose2d(p.get(l.w), 2, 1)?.add_channel_bias(p.get(l.b))
}

pub(crate) fn linear(x: &Tensor, l: &Layer, p: &Bound) -> Result<Tensor> {
    x.matmul(p.get(l.w))?.add_channel_bias(p.get(l.b))
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let b = x.shape()[0];
    x.reshape(&[b, x.numel() / b])
}

fn check_image(x: &Tensor, channels: usize, size: usize) -> Result<()> {
    match x.shape() {
        [_, c, h, w] if *c == channels && *h == size && *w == size => Ok(()),
        s => Err(dim_err!("expected [B, {channels}, {size}, {size}] images, got {:?}", s)),
    }
}

/// Shape parameters shared by both networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Square image side; a multiple of 16.
    pub image_size: usize,
    /// Base channel width of the generator.
    pub gen_width: usize,
    /// Base channel width of the discriminator trunk.
    pub disc_width: usize,
    pub injection: Injection,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return Err(Error::Config(alloc::format!(
                "image size must be a positive multiple of 16, got {}",
                self.image_size
            )));
        }
        if self.gen_width == 0 || self.disc_width == 0 {
            return Err(Error::Config(String::from("network widths must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: NetConfig,
    pub cond_width: usize,
    enc: [Layer; 3],
    fc: Layer,
    mid: [Layer; 2],
    up: [Layer; 3],
}

impl Generator {
    /// `cond_width` is the flattened condition size `k·d′`.
    pub fn new(store: &mut ParamStore, config: NetConfig, cond_width: usize, r: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.gen_width;
        let in_c = match config.injection {
            Injection::Encoder => 3 + cond_width,
            Injection::Decoder => 3,
        };
        let side = config.image_size / 8;
        let latent = 4 * c * side * side;
        let fc_in = match config.injection {
            Injection::Encoder => latent,
            Injection::Decoder => latent + cond_width,
        };
        let g = |n: &str| alloc::format!("{GENERATOR_PREFIX}{n}");
        Ok(Self {
            config,
            cond_width,
            enc: [
                conv_layer(store, &g("enc0"), c, in_c, 4, r)?,
                conv_layer(store, &g("enc1"), 2 * c, c, 4, r)?,
                conv_layer(store, &g("enc2"), 4 * c, 2 * c, 4, r)?,
            ],
            fc: linear_layer(store, &g("fc"), fc_in, latent, kaiming(fc_in), r)?,
            mid: [
                conv_layer(store, &g("mid0"), 4 * c, 4 * c, 3, r)?,
                conv_layer(store, &g("mid1"), 4 * c, 4 * c, 3, r)?,
            ],
            up: [
                tconv_layer(store, &g("up0"), 4 * c, 2 * c, r)?,
                tconv_layer(store, &g("up1"), 4 * c, c, r)?,
                tconv_layer(store, &g("up2"), 2 * c, 3, r)?,
            ],
        })
    }

    /// `x̂ = G(x, Z_t)`, values in `(−1, 1)`.
    pub fn forward(&self, p: &Bound, x: &Tensor, cond: &ConditionMatrix) -> Result<Tensor> {
        check_image(x, 3, self.config.image_size)?;
        let flat_cond = cond.zt.shape()[1] * cond.zt.shape()[2];
        if flat_cond != self.cond_width {
            return Err(dim_err!(
                "generator built for condition width {}, got {}",
                self.cond_width,
                flat_cond
            ));
        }
        let h = match self.config.injection {
            Injection::Encoder => inject_encoder(x, cond)?,
            Injection::Decoder => x.clone(),
        };
        let e0 = conv(&h, &self.enc[0], p, 2, 1)?.instance_norm()?.leaky_relu(SLOPE)?;
        let e1 = conv(&e0, &self.enc[1], p, 2, 1)?.instance_norm()?.leaky_relu(SLOPE)?;
        let h = conv(&e1, &self.enc[2], p, 2, 1)?.leaky_relu(SLOPE)?;
        let spatial = h.shape().to_vec();
        let latent = flatten(&h)?;
        let latent = match self.config.injection {
            Injection::Encoder => latent,
            Injection::Decoder => inject_decoder(&latent, cond)?,
        };
        let h = linear(&latent, &self.fc, p)?.leaky_relu(SLOPE)?.reshape(&spatial)?;
        let h = conv(&h, &self.mid[0], p, 1, 1)?.leaky_relu(SLOPE)?;
        let h = conv(&h, &self.mid[1], p, 1, 1)?.leaky_relu(SLOPE)?;
        // Encoder features skip the bottleneck; the condition enters only below it.
        let h = tconv(&h, &self.up[0], p)?.leaky_relu(SLOPE)?;
        let h = tconv(&Tensor::concat(&[h, e1], 1)?, &self.up[1], p)?.leaky_relu(SLOPE)?;
        tconv(&Tensor::concat(&[h, e0], 1)?, &self.up[2], p)?.tanh()
    }
}

/// Critic scores and attribute logits from one trunk pass.
pub struct DiscOutput {
    /// `[B, 1]`, unconstrained.
    pub critic: Tensor,
    /// `[B, k]`.
    pub logits: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: NetConfig,
    pub k: usize,
    trunk: [Layer; 4],
    critic: Layer,
    /// `w: [k, F]` (one row per attribute), `b: [k]`.
    cls: Layer,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, config: NetConfig, k: usize, r: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.disc_width;
        let side = config.image_size / 16;
        let feat = 8 * c * side * side;
        let d = |n: &str| alloc::format!("{DISC_PREFIX}{n}");
        let trunk = [
            conv_layer(store, &d("trunk.0"), c, 3, 4, r)?,
            conv_layer(store, &d("trunk.1"), 2 * c, c, 4, r)?,
            conv_layer(store, &d("trunk.2"), 4 * c, 2 * c, 4, r)?,
            conv_layer(store, &d("trunk.3"), 8 * c, 4 * c, 4, r)?,
        ];
        let critic = linear_layer(store, &d("critic"), feat, 1, kaiming(feat) / 2.0, r)?;
        let cls = Layer {
            w: store.add_normal(CLS_WEIGHT, &[k, feat], kaiming(feat) / 2.0, r)?,
            b: store.add_zeros("disc.cls.b", &[k])?,
        };
        Ok(Self { config, k, trunk, critic, cls })
    }

    pub fn feature_dim(&self) -> usize {
        let side = self.config.image_size / 16;
        8 * self.config.disc_width * side * side
    }

    /// Parameter id of the classifier weight rows `θ_p`.
    pub fn cls_rows(&self) -> ParamId {
        self.cls.w
    }

    pub fn features(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        check_image(x, 3, self.config.image_size)?;
        let mut h = x.clone();
        for l in &self.trunk {
            h = conv(&h, l, p, 2, 1)?.leaky_relu(SLOPE)?;
        }
        flatten(&h)
    }

    pub fn critic_head(&self, p: &Bound, feat: &Tensor) -> Result<Tensor> {
        linear(feat, &self.critic, p)
    }

    pub fn cls_head(&self, p: &Bound, feat: &Tensor) -> Result<Tensor> {
        feat.matmul(&p.get(self.cls.w).t()?)?.add_channel_bias(p.get(self.cls.b))
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<DiscOutput> {
        let feat = self.features(p, x)?;
        Ok(DiscOutput { critic: self.critic_head(p, &feat)?, logits: self.cls_head(p, &feat)? })
    }

    /// Critic scores only.
    pub fn score(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        self.critic_head(p, &self.features(p, x)?)
    }

    pub fn critic_param_ids(&self) -> Vec<ParamId> {
        alloc::vec![self.critic.w, self.critic.b]
    }

    pub fn cls_param_ids(&self) -> Vec<ParamId> {
        alloc::vec![self.cls.w, self.cls.b]
    }
}

pub fn is_generator_param(name: &str) -> bool {
    name.starts_with(GENERATOR_PREFIX)
}

pub fn is_disc_param(name: &str) -> bool {
    name.starts_with(DISC_PREFIX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::{assemble_condition, ConditionMode};
    use crate::cooccurrence::AttributeVector;
    use crate::rng::{self, Stream};
    use alloc::vec;

    fn randn(seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::derive(seed, Stream::Init, 0);
        (0..n).map(|_| rng::normal(&mut r)).collect()
    }

    fn config(size: usize, injection: Injection) -> NetConfig {
        NetConfig { image_size: size, gen_width: 4, disc_width: 4, injection }
    }

    fn cond(batch: usize, k: usize, d: usize, seed: u64) -> ConditionMatrix {
        let z = Tensor::new(randn(seed, k * d), &[k, d]).unwrap();
        let t: Vec<_> = (0..batch)
            .map(|b| AttributeVector::new((0..k).map(|i| ((b + i) % 2) as u8).collect()).unwrap())
            .collect();
        let s: Vec<_> = (0..batch).map(|_| AttributeVector::new(vec![0; k]).unwrap()).collect();
        assemble_condition(ConditionMode::Diff, &z, &t, &s).unwrap()
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        for size in [16, 32] {
            for inj in [Injection::Encoder, Injection::Decoder] {
                let mut store = ParamStore::new();
                let mut r = rng::derive(1, Stream::Init, 0);
                let g = Generator::new(&mut store, config(size, inj), 4 * 2, &mut r).unwrap();
                let x = Tensor::new(randn(2, 2 * 3 * size * size), &[2, 3, size, size]).unwrap();
                let out = g.forward(&store.bind(|_| false).unwrap(), &x, &cond(2, 4, 2, 3)).unwrap();
                assert_eq!(out.shape(), x.shape());
                assert!(out.data().iter().all(|v| *v > -1.0 && *v < 1.0));
            }
        }
    }

    #[test]
    fn generator_rejects_wrong_condition_width() {
        let mut store = ParamStore::new();
        let mut r = rng::derive(1, Stream::Init, 0);
        let g = Generator::new(&mut store, config(16, Injection::Decoder), 8, &mut r).unwrap();
        let x = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(g.forward(&store.bind(|_| false).unwrap(), &x, &cond(1, 4, 3, 1)).is_err());
        assert!(NetConfig { image_size: 20, ..config(16, Injection::Decoder) }.validate().is_err());
    }

    #[test]
    fn discriminator_heads_are_separate() {
        for k in [4, 13] {
            let mut store = ParamStore::new();
            let mut r = rng::derive(4, Stream::Init, 0);
            let d = Discriminator::new(&mut store, config(16, Injection::Decoder), k, &mut r).unwrap();
            let x = Tensor::new(randn(5, 3 * 3 * 256), &[3, 3, 16, 16]).unwrap();
            let base = d.forward(&store.bind(|_| false).unwrap(), &x).unwrap();
            assert_eq!(base.logits.shape(), &[3, k]);
            assert_eq!(base.critic.shape(), &[3, 1]);

            let mut s2 = store.clone();
            s2.entry_mut(d.critic_param_ids()[0]).value.iter_mut().for_each(|v| *v += 0.5);
            let out = d.forward(&s2.bind(|_| false).unwrap(), &x).unwrap();
            assert_eq!(out.logits.data(), base.logits.data());
            assert_ne!(out.critic.data(), base.critic.data());

            let mut s3 = store.clone();
            s3.entry_mut(d.cls_rows()).value.iter_mut().for_each(|v| *v += 0.5);
            let out = d.forward(&s3.bind(|_| false).unwrap(), &x).unwrap();
            assert_eq!(out.critic.data(), base.critic.data());
            assert_ne!(out.logits.data(), base.logits.data());
        }
    }

    #[test]
    fn critic_gradient_reaches_input_image() {
        let mut store = ParamStore::new();
        let mut r = rng::derive(6, Stream::Init, 0);
        let d = Discriminator::new(&mut store, config(16, Injection::Decoder), 4, &mut r).unwrap();
        let x = Tensor::param(randn(7, 2 * 3 * 256), &[2, 3, 16, 16]).unwrap();
        d.score(&store.bind(|_| false).unwrap(), &x).unwrap().mean().unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>() > 0.0);
    }

    #[test]
    fn parameter_partition_is_disjoint() {
        let mut store = ParamStore::new();
        let mut r = rng::derive(8, Stream::Init, 0);
        Generator::new(&mut store, config(16, Injection::Decoder), 4, &mut r).unwrap();
        Discriminator::new(&mut store, config(16, Injection::Decoder), 4, &mut r).unwrap();
        for e in store.entries() {
            assert!(is_generator_param(&e.name) ^ is_disc_param(&e.name), "{}", e.name);
        }
    }
}
