//! Adversarial, classification and reconstruction losses.
//!
//! The critic objective is WGAN-GP in minimization form,
//! `mean D(x̂) − mean D(x) + λ·mean (‖∇ₓD(x′)‖ − 1)²`.
//!
//! The penalty value uses the exact input gradient from a backward pass
//! with the parameters frozen. Its parameter gradient is a Hessian-vector
//! product: with `v_b = (2λ/B)·(‖g_b‖ − 1)/‖g_b‖ · g_b` the gradient is
//! `∇_θ Σ_b ⟨∇ₓD(x′_b), v_b⟩`, which is evaluated as the central difference
//! `[∇_θ ΣD(x′ + hv) − ∇_θ ΣD(x′ − hv)] / 2h`. For a critic built from
//! convolutions and leaky ReLUs `D` is piecewise linear in its input, so the
//! difference is exact unless the step crosses an activation kink; the step
//! is kept at `1e-6` in pixel units to make that rare.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::mtl::bce_with_logits;
use crate::networks::Discriminator;
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Largest pixel displacement used by the Hessian-vector difference.
pub const HVP_SPAN: f64 = 1e-6;

/// Name recorded in run metadata for the penalty-gradient method.
pub const PENALTY_METHOD: &str = "exact_input_gradient+central_difference_hvp";

/// Anything that scores a batch of images with `[B, 1]` critic values.
pub trait Critic {
    fn score(&self, p: &Bound, x: &Tensor) -> Result<Tensor>;
}

impl Critic for Discriminator {
    fn score(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        Discriminator::score(self, p, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub lambda_gp: f64,
    pub lambda_mtl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha1: 1.0, alpha2: 1.0, alpha3: 10.0, lambda_gp: 10.0, lambda_mtl: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("lambda_gp", self.lambda_gp),
            ("lambda_mtl", self.lambda_mtl),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(alloc::format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-sample interpolation `x′ = βx + (1−β)x̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPenaltySample {
    pub beta: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub shape: Vec<usize>,
}

impl GradPenaltySample {
    pub fn new(real: &Tensor, fake: &Tensor, beta: &[f64]) -> Result<Self> {
        if real.shape() != fake.shape() || real.shape().is_empty() {
            return Err(dim_err!("real {:?} vs fake {:?}", real.shape(), fake.shape()));
        }
        let b = real.shape()[0];
        if beta.len() != b {
            return Err(dim_err!("{} interpolation weights for a batch of {b}", beta.len()));
        }
        if let Some(bad) = beta.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(alloc::format!("interpolation weight {bad} outside [0,1]")));
        }
        let per = real.numel() / b;
        let x_prime = real
            .data()
            .iter()
            .zip(fake.data())
            .enumerate()
            .map(|(i, (x, f))| {
                let t = beta[i / per];
                t * x + (1.0 - t) * f
            })
            .collect();
        Ok(Self { beta: beta.to_vec(), x_prime, shape: real.shape().to_vec() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    /// `mean (‖∇ₓD(x′)‖ − 1)²`, before multiplying by `λ`.
    pub value: f64,
    pub mean_grad_norm: f64,
}

/// Input gradient of `Σ_b D(x_b)` with every parameter frozen.
pub fn input_gradient<C: Critic + ?Sized>(critic: &C, store: &ParamStore, x: &[f64], shape: &[usize]) -> Result<Vec<f64>> {
    let frozen = store.bind(|_| false)?;
    let leaf = Tensor::param(x.to_vec(), shape)?;
    let s = critic.score(&frozen, &leaf)?.sum()?;
    if !s.requires_grad() {
        return Ok(vec![0.0; x.len()]);
    }
    s.backward()?;
    Ok(leaf.grad().unwrap_or_else(|| vec![0.0; x.len()]))
}

/// Evaluate the penalty and add `lambda ×` its parameter gradient (for the
/// names selected by `trainable`) into the stored gradients.
pub fn gradient_penalty<C, T>(
    critic: &C,
    store: &mut ParamStore,
    trainable: T,
    sample: &GradPenaltySample,
    lambda: f64,
) -> Result<Penalty>
where
    C: Critic + ?Sized,
    T: Fn(&str) -> bool,
{
    let b = sample.shape[0];
    let per = sample.x_prime.len() / b;
    let g = input_gradient(critic, store, &sample.x_prime, &sample.shape)?;
    let norms: Vec<f64> = g.chunks(per).map(|c| libm::sqrt(c.iter().map(|v| v * v).sum())).collect();
    let value = norms.iter().map(|n| (n - 1.0) * (n - 1.0)).sum::<f64>() / b as f64;
    let mean_grad_norm = norms.iter().sum::<f64>() / b as f64;

    if lambda > 0.0 {
        let mut dir = vec![0.0; g.len()];
        for (i, n) in norms.iter().enumerate() {
            // the norm is not differentiable at zero; use the zero subgradient
            if *n > 0.0 {
                let coef = 2.0 * lambda / b as f64 * (n - 1.0) / n;
                for (d, gv) in dir[i * per..(i + 1) * per].iter_mut().zip(&g[i * per..(i + 1) * per]) {
                    *d = coef * gv;
                }
            }
        }
        let vmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if vmax > 0.0 {
            let h = HVP_SPAN / vmax;
            for sign in [1.0, -1.0] {
                let bound = store.bind(&trainable)?;
                let shifted: Vec<f64> =
                    sample.x_prime.iter().zip(&dir).map(|(x, d)| x + sign * h * d).collect();
                let s = critic.score(&bound, &Tensor::new(shifted, &sample.shape)?)?.sum()?;
                if s.requires_grad() {
                    s.backward()?;
                    store.accumulate(&bound, sign / (2.0 * h));
                }
            }
        }
    }
    Ok(Penalty { value, mean_grad_norm })
}

/// `mean D(x̂) − mean D(x)`.
pub fn wasserstein_term(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    d_fake.mean()?.sub(&d_real.mean()?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLoss {
    pub adv: f64,
    pub penalty: Penalty,
    /// `adv + λ·penalty`.
    pub total: f64,
}

/// Full critic objective on detached `real` and `fake` batches. Gradients of
/// the parameters selected by `trainable` are added into the store.
pub fn critic_loss<C, T>(
    critic: &C,
    store: &mut ParamStore,
    trainable: T,
    real: &Tensor,
    fake: &Tensor,
    beta: &[f64],
    lambda_gp: f64,
) -> Result<CriticLoss>
where
    C: Critic + ?Sized,
    T: Fn(&str) -> bool,
{
    let real = real.detach();
    let fake = fake.detach();
    let sample = GradPenaltySample::new(&real, &fake, beta)?;
    let bound = store.bind(&trainable)?;
    let adv = wasserstein_term(&critic.score(&bound, &real)?, &critic.score(&bound, &fake)?)?;
    if adv.requires_grad() {
        adv.backward()?;
        store.accumulate(&bound, 1.0);
    }
    let adv = adv.item()?;
    let penalty = gradient_penalty(critic, store, &trainable, &sample, lambda_gp)?;
    Ok(CriticLoss { adv, penalty, total: adv + lambda_gp * penalty.value })
}

/// `mean (1 − D(x̂))`.
pub fn generator_adv_loss(d_fake: &Tensor) -> Result<Tensor> {
    d_fake.mean()?.neg()?.add_scalar(1.0)
}

/// Mean BCE of the classifier logits on fakes against target attributes.
pub fn cls_loss_fake(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    bce_with_logits(logits, targets)
}

/// `mean |x − G(x, ·)|`.
pub fn rec_loss(x: &Tensor, reconstruction: &Tensor) -> Result<Tensor> {
    if x.shape() != reconstruction.shape() {
        return Err(dim_err!("{:?} vs {:?}", x.shape(), reconstruction.shape()));
    }
    x.sub(reconstruction)?.abs()?.mean()
}

/// Weighted generator objective with its logged decomposition.
pub struct GeneratorLoss {
    pub total: Tensor,
    pub adv: f64,
    pub cls: f64,
    pub rec: f64,
}

pub fn total_generator_loss(w: &LossWeights, adv: &Tensor, cls: &Tensor, rec: &Tensor) -> Result<GeneratorLoss> {
    let total = adv.scale(w.alpha1)?.add(&cls.scale(w.alpha2)?)?.add(&rec.scale(w.alpha3)?)?;
    Ok(GeneratorLoss { total, adv: adv.item()?, cls: cls.item()?, rec: rec.item()? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, relative_error};
    use crate::networks::{Injection, NetConfig};
    use crate::params::ParamId;
    use crate::rng::{self, Stream};

    fn randn(seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::derive(seed, Stream::Init, 0);
        (0..n).map(|_| rng::normal(&mut r)).collect()
    }

    fn uniforms(seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::derive(seed, Stream::Penalty, 0);
        (0..n).map(|_| rng::uniform(&mut r)).collect()
    }

    fn flat(x: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        x.reshape(&[b, x.numel() / b])
    }

    /// `D(x) = ⟨w, x⟩`.
    struct LinearCritic(ParamId);

    impl Critic for LinearCritic {
        fn score(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
            flat(x)?.matmul(p.get(self.0))
        }
    }

    /// Two-layer critic, leaky or smooth.
    struct MlpCritic {
        w1: ParamId,
        w2: ParamId,
        smooth: bool,
    }

    impl Critic for MlpCritic {
        fn score(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
            let h = flat(x)?.matmul(p.get(self.w1))?;
            let h = if self.smooth { h.tanh()? } else { h.leaky_relu(0.2)? };
            h.matmul(p.get(self.w2))
        }
    }

    fn images(seed: u64, b: usize, n: usize) -> Tensor {
        Tensor::new(randn(seed, b * n), &[b, n]).unwrap()
    }

    #[test]
    fn zero_critic_pays_full_penalty() {
        let mut store = ParamStore::new();
        let w = store.add_zeros("w", &[6, 1]).unwrap();
        let c = LinearCritic(w);
        let out = critic_loss(&c, &mut store, |_| true, &images(1, 4, 6), &images(2, 4, 6), &uniforms(1, 4), 10.0)
            .unwrap();
        assert_eq!(out.adv, 0.0);
        assert_eq!(out.penalty.value, 1.0);
        assert_eq!(out.total, 10.0);
    }

    #[test]
    fn unit_linear_critic_has_no_penalty() {
        for seed in 0..20 {
            let mut store = ParamStore::new();
            let mut v = randn(seed + 50, 12);
            let n = libm::sqrt(v.iter().map(|x| x * x).sum());
            v.iter_mut().for_each(|x| *x /= n);
            let w = store.add("w", &[12, 1], v).unwrap();
            let c = LinearCritic(w);
            let sample = GradPenaltySample::new(&images(seed, 3, 12), &images(seed + 7, 3, 12), &uniforms(seed, 3)).unwrap();
            let p = gradient_penalty(&c, &mut store, |_| true, &sample, 10.0).unwrap();
            assert!(p.value < 1e-10, "seed {seed}: {}", p.value);
        }
    }

    #[test]
    fn without_penalty_reduces_to_mean_gap() {
        let mut store = ParamStore::new();
        let w = store.add("w", &[5, 1], randn(3, 5)).unwrap();
        let c = LinearCritic(w);
        let (real, fake) = (images(4, 3, 5), images(5, 3, 5));
        let out = critic_loss(&c, &mut store, |_| false, &real, &fake, &uniforms(2, 3), 0.0).unwrap();
        let frozen = store.bind(|_| false).unwrap();
        let dr = c.score(&frozen, &real).unwrap();
        let df = c.score(&frozen, &fake).unwrap();
        let mean = |t: &Tensor| t.data().iter().sum::<f64>() / 3.0;
        assert!((out.total - (mean(&df) - mean(&dr))).abs() < 1e-14);
    }

    #[test]
    fn interpolation_stays_on_segment() {
        let (real, fake) = (images(1, 4, 3), images(2, 4, 3));
        let beta = uniforms(3, 4);
        let s = GradPenaltySample::new(&real, &fake, &beta).unwrap();
        for (i, v) in s.x_prime.iter().enumerate() {
            let (a, b) = (real.data()[i], fake.data()[i]);
            assert!(*v >= a.min(b) - 1e-15 && *v <= a.max(b) + 1e-15);
        }
        assert!(GradPenaltySample::new(&real, &fake, &[0.5; 3]).is_err());
        assert!(GradPenaltySample::new(&real, &fake, &[1.5; 4]).is_err());
    }

    /// Numeric gradient of the critic objective value over every parameter.
    fn numeric_grads<C: Critic>(
        c: &C,
        store: &ParamStore,
        real: &Tensor,
        fake: &Tensor,
        beta: &[f64],
        h: f64,
    ) -> Vec<Vec<f64>> {
        let value = |s: &ParamStore| {
            let mut s = s.clone();
            critic_loss(c, &mut s, |_| false, real, fake, beta, 10.0).unwrap().total
        };
        store
            .ids()
            .map(|id| {
                (0..store.entry(id).value.len())
                    .map(|i| {
                        let mut plus = store.clone();
                        plus.entry_mut(id).value[i] += h;
                        let mut minus = store.clone();
                        minus.entry_mut(id).value[i] -= h;
                        (value(&plus) - value(&minus)) / (2.0 * h)
                    })
                    .collect()
            })
            .collect()
    }

    fn check_critic_gradient(smooth: bool, tol: f64) {
        for seed in 0..10 {
            let mut store = ParamStore::new();
            let w1 = store.add("w1", &[6, 5], randn(seed, 30)).unwrap();
            let w2 = store.add("w2", &[5, 1], randn(seed + 1000, 5)).unwrap();
            let c = MlpCritic { w1, w2, smooth };
            let (real, fake) = (images(seed + 1, 4, 6), images(seed + 2, 4, 6));
            let beta = uniforms(seed, 4);
            let numeric = numeric_grads(&c, &store, &real, &fake, &beta, 1e-6);
            let mut analytic = store.clone();
            critic_loss(&c, &mut analytic, |_| true, &real, &fake, &beta, 10.0).unwrap();
            let mut worst = 0.0f64;
            for (id, num) in store.ids().zip(&numeric) {
                for (a, n) in analytic.entry(id).grad.iter().zip(num) {
                    worst = worst.max(relative_error(*a, *n));
                }
            }
            assert!(worst < tol, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences_piecewise_linear() {
        check_critic_gradient(false, 1e-5);
    }

    #[test]
    fn critic_gradient_matches_finite_differences_smooth() {
        check_critic_gradient(true, 1e-5);
    }

    #[test]
    fn discriminator_penalty_gradient_matches_finite_differences() {
        let config = NetConfig { image_size: 16, gen_width: 2, disc_width: 2, injection: Injection::Decoder };
        let mut store = ParamStore::new();
        let mut r = rng::derive(3, Stream::Init, 0);
        let d = Discriminator::new(&mut store, config, 2, &mut r).unwrap();
        let real = Tensor::new(randn(1, 2 * 768), &[2, 3, 16, 16]).unwrap();
        let fake = Tensor::new(randn(2, 2 * 768), &[2, 3, 16, 16]).unwrap();
        let beta = uniforms(4, 2);
        let mut analytic = store.clone();
        critic_loss(&d, &mut analytic, |n| n.starts_with("disc."), &real, &fake, &beta, 10.0).unwrap();
        // spot-check a spread of coordinates in every critic parameter
        let value = |s: &ParamStore| {
            let mut s = s.clone();
            critic_loss(&d, &mut s, |_| false, &real, &fake, &beta, 10.0).unwrap().total
        };
        let h = 1e-6;
        let mut worst = 0.0f64;
        for id in store.ids() {
            let n = store.entry(id).value.len();
            for i in (0..n).step_by(n / 5 + 1) {
                let mut plus = store.clone();
                plus.entry_mut(id).value[i] += h;
                let mut minus = store.clone();
                minus.entry_mut(id).value[i] -= h;
                let num = (value(&plus) - value(&minus)) / (2.0 * h);
                worst = worst.max(relative_error(analytic.entry(id).grad[i], num));
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn generator_adversarial_examples() {
        let zero = Tensor::zeros(&[4, 1]);
        assert_eq!(generator_adv_loss(&zero).unwrap().item().unwrap(), 1.0);
        let c = Tensor::full(&[4, 1], 0.25).unwrap();
        assert_eq!(generator_adv_loss(&c).unwrap().item().unwrap(), 0.75);
    }

    #[test]
    fn generator_adversarial_gradient_on_toy_generator() {
        // x̂ = a·x + b scored by a fixed leaky critic
        for seed in 0..10 {
            let x = images(seed, 3, 4);
            let w1 = Tensor::new(randn(seed + 1, 20), &[4, 5]).unwrap();
            let w2 = Tensor::new(randn(seed + 2, 5), &[5, 1]).unwrap();
            let rep = gradcheck::check(
                |t| {
                    let fake = x.mul(&t[0].broadcast_row(3)?.matmul(&Tensor::full(&[1, 4], 1.0)?)?)?;
                    let fake = fake.add(&t[1].broadcast_row(3)?.matmul(&Tensor::full(&[1, 4], 1.0)?)?)?;
                    let d = fake.matmul(&w1)?.leaky_relu(0.2)?.matmul(&w2)?;
                    generator_adv_loss(&d)
                },
                &[(vec![0.7], vec![1]), (vec![-0.3], vec![1])],
                1e-6,
            )
            .unwrap();
            assert!(rep.max_rel_error < 1e-5, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn reconstruction_examples() {
        let x = images(3, 2, 6);
        assert_eq!(rec_loss(&x, &x).unwrap().item().unwrap(), 0.0);
        let m = x.data().iter().map(|v| v.abs()).sum::<f64>() / 12.0;
        let v = rec_loss(&x, &Tensor::zeros(&[2, 6])).unwrap().item().unwrap();
        assert!((v - m).abs() < 1e-15);
        assert!(rec_loss(&x, &Tensor::zeros(&[2, 5])).is_err());
    }

    #[test]
    fn fake_classification_examples() {
        let l = Tensor::new(vec![1.0, -1.0], &[1, 2]).unwrap();
        let y = Tensor::new(vec![1.0, 0.0], &[1, 2]).unwrap();
        assert!((cls_loss_fake(&l, &y).unwrap().item().unwrap() - 0.3133).abs() < 5e-5);
    }

    #[test]
    fn total_loss_weights() {
        let adv = Tensor::scalar(0.4).unwrap();
        let cls = Tensor::scalar(0.7).unwrap();
        let rec = Tensor::scalar(0.2).unwrap();
        let only = |a1, a2, a3| {
            let w = LossWeights { alpha1: a1, alpha2: a2, alpha3: a3, ..LossWeights::default() };
            total_generator_loss(&w, &adv, &cls, &rec).unwrap().total.item().unwrap()
        };
        assert_eq!(only(1.0, 0.0, 0.0), 0.4);
        assert_eq!(only(0.0, 0.0, 1.0), 0.2);
        assert!((only(0.0, 2.0, 0.0) - 2.0 * only(0.0, 1.0, 0.0)).abs() < 1e-15);
        assert!(LossWeights { alpha2: -1.0, ..LossWeights::default() }.validate().is_err());
        assert!(LossWeights { lambda_gp: f64::NAN, ..LossWeights::default() }.validate().is_err());
    }
}
