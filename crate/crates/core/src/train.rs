//! The adversarial training loop and its evaluation.
//!
//! One generator step is preceded by `n_critic` critic steps. Every random
//! draw comes from a stream keyed by `(seed, stream, step·(n_critic+1)+j)`,
//! so a run is a pure function of its configuration, and a saved
//! [`TrainState`] (parameters, optimizer moments, step counter) resumes it
//! exactly.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::condition::{
    ConditionKind, ConditionMode, ConditionSources, ConditionSpec, Conditioner, EmbeddingTable,
    GraphConditioner,
};
use crate::cooccurrence::{build_cooccurrence, AttributeVector, CooccurrenceMatrix};
use crate::dataset::{label_tensor, sample_targets, Dataset, PixelOracle, SyntheticSpec, TargetPolicy};
use crate::error::{Error, Result};
use crate::losses::{
    cls_loss_fake, generator_adv_loss, gradient_penalty, rec_loss, total_generator_loss, wasserstein_term,
    GradPenaltySample, LossWeights,
};
use crate::metrics::{batch_quality, tarr, ClassifierConfig, ReferenceClassifier, TarrReport, TarrScope};
use crate::mtl::{cls_loss_real, mtl_regularizer, weighted_row_distance, InteractionMatrix};
use crate::networks::{is_disc_param, is_generator_param, Discriminator, Generator, Injection, NetConfig};
use crate::params::{Adam, AdamConfig, ParamId, ParamStore};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

const GCN_PREFIX: &str = "gcn.";
const PRETRAIN_PROJ: &str = "gcn_pretrain.proj";

/// How the graph conditioner is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// GCN weights receive gradients on every generator step.
    EndToEnd,
    /// GCN weights are fitted by attribute classification first, then frozen.
    TwoStage,
}

impl TrainingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::EndToEnd => "end_to_end",
            TrainingMode::TwoStage => "two_stage",
        }
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "end_to_end" => Ok(TrainingMode::EndToEnd),
            "two_stage" => Ok(TrainingMode::TwoStage),
            _ => Err(Error::Config(alloc::format!("unknown training mode `{s}`"))),
        }
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub synthetic: SyntheticSpec,
    pub n_train: usize,
    pub n_eval: usize,
    pub condition: ConditionSpec,
    /// Output width of each GCN layer; the last one is `d′`.
    pub gcn_widths: Vec<usize>,
    /// Let the GCN input features train along with the layer weights.
    pub gcn_x0_trainable: bool,
    pub training: TrainingMode,
    pub pretrain_steps: usize,
    pub mtl_enabled: bool,
    pub gen_width: usize,
    pub disc_width: usize,
    pub injection: Injection,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch: usize,
    pub n_critic: usize,
    pub target_policy: TargetPolicy,
    pub eval_every: usize,
    /// Evaluation images; each is translated once per attribute.
    pub eval_images: usize,
    pub checkpoint_every: usize,
    pub classifier: ClassifierConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synthetic: SyntheticSpec::default(),
            n_train: 8000,
            n_eval: 2000,
            condition: ConditionSpec {
                kind: ConditionKind::GcnReprs,
                mode: ConditionMode::Diff,
                embed_dim: 8,
            },
            gcn_widths: vec![16, 8],
            gcn_x0_trainable: false,
            training: TrainingMode::EndToEnd,
            pretrain_steps: 200,
            mtl_enabled: true,
            gen_width: 8,
            disc_width: 8,
            injection: Injection::Decoder,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            steps: 6000,
            batch: 32,
            n_critic: 5,
            target_policy: TargetPolicy::PermuteBatch,
            eval_every: 1000,
            eval_images: 200,
            checkpoint_every: 1000,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn net(&self) -> NetConfig {
        NetConfig {
            image_size: self.synthetic.image_size,
            gen_width: self.gen_width,
            disc_width: self.disc_width,
            injection: self.injection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.synthetic.validate().map_err(|e| Error::Config(alloc::format!("{e}")))?;
        self.net().validate()?;
        self.weights.validate()?;
        if self.batch == 0 || self.n_critic == 0 {
            return cfg(String::from("batch and n_critic must be positive"));
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return cfg(String::from("train and eval splits must be non-empty"));
        }
        if self.eval_images > self.n_eval {
            return cfg(alloc::format!("eval_images {} exceeds n_eval {}", self.eval_images, self.n_eval));
        }
        let a = self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return cfg(String::from("invalid Adam settings"));
        }
        if self.condition.kind == ConditionKind::GcnReprs && self.gcn_widths.is_empty() {
            return cfg(String::from("gcn_reprs needs at least one layer width"));
        }
        Ok(())
    }
}

/// Mutable part of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub store: ParamStore,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    /// Completed generator steps.
    pub step: u64,
}

/// Logged losses of one generator step (critic terms averaged over its
/// critic steps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub d_adv: f64,
    pub gp: f64,
    pub g_adv: f64,
    pub cls_fake: f64,
    pub rec: f64,
    pub cls_real: f64,
    pub r_mtl: f64,
    /// `Σ_{i≠j} A_ij ‖θ_i − θ_j‖²` over the classifier rows.
    pub row_distance: f64,
}

impl LossRow {
    pub const HEADER: &'static str = "step,L_D_adv,gp,L_G_adv,L_cls_fake,L_rec,L_cls_real,R_mtl,row_distance";

    pub fn values(&self) -> [f64; 8] {
        [self.d_adv, self.gp, self.g_adv, self.cls_fake, self.rec, self.cls_real, self.r_mtl, self.row_distance]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub step: u64,
    /// Recognition rate by the reference classifier.
    pub tarr: TarrReport,
    /// Recognition rate by the pixel oracle, for comparison.
    pub oracle_tarr: TarrReport,
    /// Reconstruction quality against the source images.
    pub psnr: f64,
    pub ssim: f64,
}

/// Fixed parts of a run: data, graph, networks, and the reference
/// classifier used for evaluation.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub eval: Dataset,
    pub cooccurrence: CooccurrenceMatrix,
    pub interaction: InteractionMatrix,
    pub classifier: ReferenceClassifier,
    pub generator: Generator,
    pub disc: Discriminator,
    pub conditioner: Conditioner,
    gen_ids: Vec<ParamId>,
    disc_ids: Vec<ParamId>,
}

/// Train and eval splits of the synthetic dataset.
pub fn synthetic_splits(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let train = Dataset::synthetic(&config.synthetic, config.seed, 0, config.n_train)?;
    let eval = Dataset::synthetic(&config.synthetic, config.seed, config.n_train as u64, config.n_eval)?;
    Ok((train, eval))
}

/// Reference classifier fitted on the training split only.
pub fn train_reference_classifier(config: &ExperimentConfig, train: &Dataset) -> Result<ReferenceClassifier> {
    let mut clf = ReferenceClassifier::new(train.image_size, train.names.len(), config.classifier, config.seed)?;
    clf.train(train, config.seed)?;
    Ok(clf)
}

impl Experiment {
    /// Build the networks and the initial state. The classifier must have
    /// been trained on `train` already.
    pub fn setup(
        config: ExperimentConfig,
        train: Dataset,
        eval: Dataset,
        classifier: ReferenceClassifier,
        table: Option<EmbeddingTable>,
    ) -> Result<(Self, TrainState)> {
        config.validate()?;
        if train.image_size != config.synthetic.image_size || eval.image_size != train.image_size {
            return Err(Error::Config(String::from("dataset image size does not match the configuration")));
        }
        if eval.names != train.names {
            return Err(Error::Config(String::from("train and eval attributes differ")));
        }
        let k = train.names.len();
        let cooccurrence = build_cooccurrence(&train.names, &train.attributes)?;
        let interaction = InteractionMatrix::from_cooccurrence(&cooccurrence)?;

        let mut store = ParamStore::new();
        let mut sources = ConditionSources {
            table,
            cooccurrence: Some(cooccurrence.clone()),
            gcn: None,
        };
        if config.condition.kind == ConditionKind::GcnReprs {
            let x0 = classifier.head_rows().to_vec();
            let mut r = rng::derive(config.seed, Stream::Init, 2);
            sources.gcn = Some(GraphConditioner::new(
                &mut store,
                &cooccurrence.c_hat,
                k,
                x0,
                &config.gcn_widths,
                &mut r,
            )?);
        }
        let mut r = rng::derive(config.seed, Stream::Condition, 0);
        let conditioner = Conditioner::new(config.condition, &train.names, sources, &mut r)?;

        let mut r = rng::derive(config.seed, Stream::Init, 0);
        let generator = Generator::new(&mut store, config.net(), conditioner.flat_width(), &mut r)?;
        let mut r = rng::derive(config.seed, Stream::Init, 1);
        let disc = Discriminator::new(&mut store, config.net(), k, &mut r)?;

        let mut exp = Self {
            gen_ids: Vec::new(),
            disc_ids: store.select(is_disc_param),
            config,
            train,
            eval,
            cooccurrence,
            interaction,
            classifier,
            generator,
            disc,
            conditioner,
        };
        if exp.conditioner.graph().is_some() && exp.config.training == TrainingMode::TwoStage {
            exp.pretrain_graph(&mut store)?;
        }
        exp.gen_ids = store.select(|n| exp.generator_trainable(n));
        let state = TrainState {
            store,
            gen_opt: Adam::new(exp.config.adam),
            disc_opt: Adam::new(exp.config.adam),
            step: 0,
        };
        Ok((exp, state))
    }

    /// Parameters updated on generator steps.
    pub fn generator_trainable(&self, name: &str) -> bool {
        if is_generator_param(name) {
            return true;
        }
        if !name.starts_with(GCN_PREFIX) || self.config.training == TrainingMode::TwoStage {
            return false;
        }
        name != GraphConditioner::X0_NAME || self.config.gcn_x0_trainable
    }

    /// Fit the GCN by attribute classification on frozen classifier
    /// features: `logits = features · P · Zᵀ`.
    fn pretrain_graph(&self, store: &mut ParamStore) -> Result<()> {
        let clf = &self.classifier;
        let mut r = rng::derive(self.config.seed, Stream::Init, 3);
        let d = self.conditioner.width();
        let f = clf.config.feature_dim;
        let proj = store.add_normal(PRETRAIN_PROJ, &[f, d], libm::sqrt(1.0 / f as f64), &mut r)?;
        let x0_trainable = self.config.gcn_x0_trainable;
        let trainable = |n: &str| {
            n == PRETRAIN_PROJ || (n.starts_with(GCN_PREFIX) && (n != GraphConditioner::X0_NAME || x0_trainable))
        };
        let ids = store.select(trainable);
        let mut opt = Adam::new(AdamConfig { lr: 1e-3, beta1: 0.9, ..AdamConfig::default() });
        let frozen_clf = clf.store.bind(|_| false)?;
        for step in 0..self.config.pretrain_steps {
            let mut r = rng::derive(self.config.seed, Stream::Classifier, 1_000_000 + step as u64);
            let idx = self.train.sample_indices(self.config.batch, &mut r);
            let (x, attrs) = self.train.batch(&idx)?;
            let feats = clf.features(&frozen_clf, &x)?;
            let bound = store.bind(trainable)?;
            let z = self.conditioner.z(&bound)?;
            let logits = feats.matmul(bound.get(proj))?.matmul(&z.t()?)?;
            let loss = crate::mtl::bce_with_logits(&logits, &label_tensor(&attrs)?)?;
            loss.backward()?;
            store.zero_grads();
            store.accumulate(&bound, 1.0);
            opt.update(store, &ids);
        }
        store.zero_grads();
        Ok(())
    }

    fn substep_index(&self, step: u64, j: usize) -> u64 {
        step * (self.config.n_critic as u64 + 1) + j as u64
    }

    fn draw_batch(&self, step: u64, j: usize) -> Result<(Tensor, Vec<AttributeVector>, Vec<AttributeVector>)> {
        let i = self.substep_index(step, j);
        let mut r = rng::derive(self.config.seed, Stream::Batch, i);
        let idx = self.train.sample_indices(self.config.batch, &mut r);
        let (x, sources) = self.train.batch(&idx)?;
        let mut r = rng::derive(self.config.seed, Stream::Target, i);
        let targets = sample_targets(&sources, self.config.target_policy, &self.config.synthetic, &mut r);
        Ok((x, sources, targets))
    }

    /// `G(x, Z_t)` with every parameter frozen.
    pub fn translate(
        &self,
        state: &TrainState,
        x: &Tensor,
        targets: &[AttributeVector],
        sources: &[AttributeVector],
    ) -> Result<Tensor> {
        let frozen = state.store.bind(|_| false)?;
        let cond = self.conditioner.assemble(&frozen, targets, sources)?;
        self.generator.forward(&frozen, x, &cond)
    }

    fn lambda_mtl(&self) -> f64 {
        if self.config.mtl_enabled {
            self.config.weights.lambda_mtl
        } else {
            0.0
        }
    }

    /// One critic update; returns `(adv, gp, cls_real)`.
    fn critic_step(&self, state: &mut TrainState, j: usize) -> Result<(f64, f64, f64)> {
        let (x, sources, targets) = self.draw_batch(state.step, j)?;
        let fake = self.translate(state, &x, &targets, &sources)?;
        let store = &mut state.store;
        store.zero_grads();

        let bound = store.bind(is_disc_param)?;
        let real_out = self.disc.forward(&bound, &x)?;
        let fake_score = self.disc.score(&bound, &fake)?;
        let adv = wasserstein_term(&real_out.critic, &fake_score)?;
        let rows = bound.get(self.disc.cls_rows());
        let cls = cls_loss_real(&real_out.logits, &label_tensor(&sources)?, rows, &self.interaction, self.lambda_mtl())?;
        adv.add(&cls)?.backward()?;
        store.accumulate(&bound, 1.0);

        let mut r = rng::derive(self.config.seed, Stream::Penalty, self.substep_index(state.step, j));
        let beta: Vec<f64> = (0..self.config.batch).map(|_| rng::uniform(&mut r)).collect();
        let sample = GradPenaltySample::new(&x, &fake, &beta)?;
        let gp = gradient_penalty(&self.disc, store, is_disc_param, &sample, self.config.weights.lambda_gp)?;

        if store.grad_norm(&self.gen_ids) != 0.0 {
            return Err(Error::Contract(String::from("critic step produced generator gradients")));
        }
        state.disc_opt.update(store, &self.disc_ids);
        Ok((adv.item()?, gp.value, cls.item()?))
    }

    /// One generator update; returns `(adv, cls_fake, rec)`.
    fn generator_step(&self, state: &mut TrainState) -> Result<(f64, f64, f64)> {
        let j = self.config.n_critic;
        let (x, sources, targets) = self.draw_batch(state.step, j)?;
        let store = &mut state.store;
        store.zero_grads();

        let bound = store.bind(|n| self.generator_trainable(n))?;
        let cond = self.conditioner.assemble(&bound, &targets, &sources)?;
        let fake = self.generator.forward(&bound, &x, &cond)?;
        let out = self.disc.forward(&bound, &fake)?;
        let adv = generator_adv_loss(&out.critic)?;
        let cls = cls_loss_fake(&out.logits, &label_tensor(&targets)?)?;
        let same = self.conditioner.assemble(&bound, &sources, &sources)?;
        let rec = rec_loss(&x, &self.generator.forward(&bound, &x, &same)?)?;
        let loss = total_generator_loss(&self.config.weights, &adv, &cls, &rec)?;
        loss.total.backward()?;
        store.accumulate(&bound, 1.0);

        if store.grad_norm(&self.disc_ids) != 0.0 {
            return Err(Error::Contract(String::from("generator step produced critic gradients")));
        }
        state.gen_opt.update(store, &self.gen_ids);
        Ok((loss.adv, loss.cls, loss.rec))
    }

    /// Current regularizer value and row distance of the classifier head.
    pub fn row_coupling(&self, state: &TrainState) -> Result<(f64, f64)> {
        let e = state.store.entry(self.disc.cls_rows());
        let rows = Tensor::new(e.value.clone(), &e.shape)?;
        let r = mtl_regularizer(&rows, &self.interaction)?.item()?;
        Ok((r, weighted_row_distance(&e.value, &self.interaction)?))
    }

    /// `n_critic` critic updates followed by one generator update.
    pub fn train_step(&self, state: &mut TrainState) -> Result<LossRow> {
        let n = self.config.n_critic as f64;
        let (mut d_adv, mut gp, mut cls_real) = (0.0, 0.0, 0.0);
        for j in 0..self.config.n_critic {
            let (a, g, c) = self.critic_step(state, j)?;
            d_adv += a / n;
            gp += g / n;
            cls_real += c / n;
        }
        let (g_adv, cls_fake, rec) = self.generator_step(state)?;
        state.store.zero_grads();
        let (r_mtl, row_distance) = self.row_coupling(state)?;
        let row = LossRow { step: state.step, d_adv, gp, g_adv, cls_fake, rec, cls_real, r_mtl, row_distance };
        if !row.is_finite() {
            return Err(Error::NonFinite("training losses"));
        }
        state.step += 1;
        Ok(row)
    }

    /// Translate the first `eval_images` evaluation images once per
    /// attribute (flipping it) and score the results; also score the
    /// reconstruction path against the sources.
    pub fn evaluate(&self, state: &TrainState) -> Result<EvalReport> {
        let n = self.config.eval_images.min(self.eval.len());
        let k = self.eval.names.len();
        let oracle = PixelOracle { image_size: self.eval.image_size };
        let mut fakes = Vec::with_capacity(n * k * self.eval.image_len());
        let (mut all_t, mut all_s) = (Vec::new(), Vec::new());
        let (mut psnr, mut ssim) = (0.0, 0.0);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(32) {
            let (x, sources) = self.eval.batch(chunk)?;
            let rec = self.translate(state, &x, &sources, &sources)?;
            let (p, q) = batch_quality(&x, &rec)?;
            psnr += p * chunk.len() as f64;
            ssim += q * chunk.len() as f64;
            for a in 0..k {
                let targets: Vec<AttributeVector> = sources
                    .iter()
                    .map(|s| {
                        let mut t = s.clone();
                        t.set(a, !s.get(a));
                        t
                    })
                    .collect();
                fakes.extend_from_slice(self.translate(state, &x, &targets, &sources)?.data());
                all_t.extend(targets);
                all_s.extend(sources.iter().cloned());
            }
        }
        let s = self.eval.image_size;
        let images = Tensor::new(fakes, &[all_t.len(), 3, s, s])?;
        Ok(EvalReport {
            step: state.step,
            tarr: tarr(&images, &all_t, &all_s, &self.classifier, TarrScope::Changed)?,
            oracle_tarr: tarr(&images, &all_t, &all_s, &oracle, TarrScope::Changed)?,
            psnr: psnr / n as f64,
            ssim: ssim / n as f64,
        })
    }

    /// Run `steps` more generator steps, handing each row to `on_step`.
    pub fn train<F>(&self, state: &mut TrainState, steps: usize, mut on_step: F) -> Result<Vec<LossRow>>
    where
        F: FnMut(&LossRow, &TrainState) -> Result<()>,
    {
        let mut history = Vec::with_capacity(steps);
        for _ in 0..steps {
            let row = self.train_step(state)?;
            on_step(&row, state)?;
            history.push(row);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ConditionKind, mode: ConditionMode) -> ExperimentConfig {
        ExperimentConfig {
            seed: 5,
            synthetic: SyntheticSpec { image_size: 16, ..SyntheticSpec::default() },
            n_train: 64,
            n_eval: 16,
            condition: ConditionSpec { kind, mode, embed_dim: 4 },
            gcn_widths: vec![8, 4],
            gen_width: 4,
            disc_width: 4,
            steps: 2,
            batch: 4,
            n_critic: 2,
            eval_images: 4,
            pretrain_steps: 3,
            classifier: ClassifierConfig { steps: 5, batch: 8, ..ClassifierConfig::default() },
            ..ExperimentConfig::default()
        }
    }

    fn build(config: ExperimentConfig) -> (Experiment, TrainState) {
        let (train, eval) = synthetic_splits(&config).unwrap();
        let clf = train_reference_classifier(&config, &train).unwrap();
        Experiment::setup(config, train, eval, clf, None).unwrap()
    }

    #[test]
    fn zero_steps_keeps_initial_state() {
        let (exp, mut state) = build(tiny(ConditionKind::GcnReprs, ConditionMode::Diff));
        let before = state.clone();
        let hist = exp.train(&mut state, 0, |_, _| Ok(())).unwrap();
        assert!(hist.is_empty());
        assert_eq!(state, before);
    }

    #[test]
    fn same_seed_same_losses() {
        let run = || {
            let (exp, mut state) = build(tiny(ConditionKind::GcnReprs, ConditionMode::Diff));
            exp.train(&mut state, 2, |_, _| Ok(())).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.iter().all(LossRow::is_finite));
    }

    #[test]
    fn resumed_state_continues_identically() {
        let (exp, mut full) = build(tiny(ConditionKind::OneHot, ConditionMode::Std));
        let mut half = full.clone();
        let a = exp.train(&mut full, 2, |_, _| Ok(())).unwrap();
        let first = exp.train(&mut half, 1, |_, _| Ok(())).unwrap();
        let mut resumed = half.clone();
        let second = exp.train(&mut resumed, 1, |_, _| Ok(())).unwrap();
        assert_eq!(a, [first, second].concat());
        assert_eq!(full, resumed);
    }

    #[test]
    fn end_to_end_updates_graph_two_stage_freezes_it() {
        for (mode, moves) in [(TrainingMode::EndToEnd, true), (TrainingMode::TwoStage, false)] {
            let config = ExperimentConfig { training: mode, ..tiny(ConditionKind::GcnReprs, ConditionMode::Diff) };
            let (exp, mut state) = build(config);
            let theta = state.store.id("gcn.theta0").unwrap();
            let x0 = state.store.id(GraphConditioner::X0_NAME).unwrap();
            let before = state.store.clone();
            exp.train(&mut state, 1, |_, _| Ok(())).unwrap();
            assert_eq!(state.store.entry(theta).value != before.entry(theta).value, moves);
            assert_eq!(state.store.entry(x0).value, before.entry(x0).value);
        }
    }

    #[test]
    fn condition_kind_does_not_change_data_stream() {
        let (a, _) = build(tiny(ConditionKind::OneHot, ConditionMode::Std));
        let (b, _) = build(tiny(ConditionKind::GcnReprs, ConditionMode::Diff));
        for step in 0..3 {
            for j in 0..3 {
                let (xa, sa, ta) = a.draw_batch(step, j).unwrap();
                let (xb, sb, tb) = b.draw_batch(step, j).unwrap();
                assert_eq!(xa.data(), xb.data());
                assert_eq!((sa, ta), (sb, tb));
            }
        }
    }

    #[test]
    fn evaluation_reports_every_attribute() {
        let (exp, state) = build(tiny(ConditionKind::OneHot, ConditionMode::Diff));
        let rep = exp.evaluate(&state).unwrap();
        assert_eq!(rep.tarr.counts, vec![4; 4]);
        assert!(rep.psnr > 0.0 && rep.ssim <= 1.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = tiny(ConditionKind::OneHot, ConditionMode::Std);
        c.batch = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny(ConditionKind::OneHot, ConditionMode::Std);
        c.eval_images = 100;
        assert!(c.validate().is_err());
    }
}
