//! Flat `key = value` experiment configuration.
//!
//! Lines are `dotted.key = value`; `#` starts a comment. Every key has a
//! default, and [`RunConfig::snapshot`] writes all of them back so a run
//! directory describes itself. Chain nodes of the synthetic dataset are
//! given per attribute as `data.chain.<name> = p` (independent) or
//! `data.chain.<name> = <parent>:<p_off>,<p_on>`.

use std::path::{Path, PathBuf};

use attrgraph_core::dataset::{ChainNode, ATTRIBUTE_NAMES};
use attrgraph_core::train::ExperimentConfig;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::read_text;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Directory with an annotation file and images; the synthetic
    /// generator is used when absent.
    pub data_path: Option<PathBuf>,
    /// Embedding table for `word2vec` / `attrbs_weights` conditions.
    pub table_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            data_path: None,
            table_path: None,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn attr_index(key: &str, name: &str) -> Result<usize> {
    ATTRIBUTE_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::Config(format!("`{key}`: unknown attribute `{name}`")))
}

fn parse_chain(key: &str, v: &str) -> Result<ChainNode> {
    match v.split_once(':') {
        None => Ok(ChainNode::marginal(parse_num(key, v)?)),
        Some((parent, probs)) => {
            let parent = attr_index(key, parent.trim())?;
            let (off, on) = probs
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("`{key}`: expected `parent:p_off,p_on`")))?;
            Ok(ChainNode::conditional(parent, parse_num(key, off.trim())?, parse_num(key, on.trim())?))
        }
    }
}

fn chain_value(node: &ChainNode) -> Result<String> {
    match (node.parents.as_slice(), node.probs.as_slice()) {
        ([], [p]) => Ok(p.to_string()),
        ([parent], [off, on]) => Ok(format!("{}:{off},{on}", ATTRIBUTE_NAMES[*parent])),
        _ => Err(Error::Config("chain nodes with several parents cannot be written".into())),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, format!("expected `key = value`, got `{line}`")))?;
            c.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}:{}: {m}", path.display(), i + 1)),
                other => other,
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        Ok(())
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.experiment;
        match key {
            "seed" => e.seed = parse_num(key, v)?,
            "data.path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.image_size" => e.synthetic.image_size = parse_num(key, v)?,
            "data.n_train" => e.n_train = parse_num(key, v)?,
            "data.n_eval" => e.n_eval = parse_num(key, v)?,
            "condition.kind" => e.condition.kind = v.parse()?,
            "condition.mode" => e.condition.mode = v.parse()?,
            "condition.embed_dim" => e.condition.embed_dim = parse_num(key, v)?,
            "condition.table" => self.table_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "gcn.widths" => e.gcn_widths = parse_list(key, v)?,
            "gcn.x0_trainable" => e.gcn_x0_trainable = parse_bool(key, v)?,
            "training.mode" => e.training = v.parse()?,
            "training.pretrain_steps" => e.pretrain_steps = parse_num(key, v)?,
            "mtl.enabled" => e.mtl_enabled = parse_bool(key, v)?,
            "mtl.lambda" => e.weights.lambda_mtl = parse_num(key, v)?,
            "net.gen_width" => e.gen_width = parse_num(key, v)?,
            "net.disc_width" => e.disc_width = parse_num(key, v)?,
            "net.injection" => e.injection = v.parse()?,
            "loss.alpha1" => e.weights.alpha1 = parse_num(key, v)?,
            "loss.alpha2" => e.weights.alpha2 = parse_num(key, v)?,
            "loss.alpha3" => e.weights.alpha3 = parse_num(key, v)?,
            "loss.lambda_gp" => e.weights.lambda_gp = parse_num(key, v)?,
            "optim.lr" => e.adam.lr = parse_num(key, v)?,
            "optim.beta1" => e.adam.beta1 = parse_num(key, v)?,
            "optim.beta2" => e.adam.beta2 = parse_num(key, v)?,
            "train.steps" => e.steps = parse_num(key, v)?,
            "train.batch" => e.batch = parse_num(key, v)?,
            "train.n_critic" => e.n_critic = parse_num(key, v)?,
            "train.target_policy" => e.target_policy = v.parse()?,
            "eval.every" => e.eval_every = parse_num(key, v)?,
            "eval.images" => e.eval_images = parse_num(key, v)?,
            "checkpoint.every" => e.checkpoint_every = parse_num(key, v)?,
            "classifier.width" => e.classifier.width = parse_num(key, v)?,
            "classifier.feature_dim" => e.classifier.feature_dim = parse_num(key, v)?,
            "classifier.steps" => e.classifier.steps = parse_num(key, v)?,
            "classifier.batch" => e.classifier.batch = parse_num(key, v)?,
            "classifier.lr" => e.classifier.lr = parse_num(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => match key.strip_prefix("data.chain.") {
                Some(name) => {
                    let i = attr_index(key, name)?;
                    e.synthetic.chain[i] = parse_chain(key, v)?;
                }
                None => return Err(Error::Config(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Result<Vec<(String, String)>> {
        let e = &self.experiment;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let widths = e.gcn_widths.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out: Vec<(&str, String)> = vec![
            ("seed", e.seed.to_string()),
            ("data.path", path(&self.data_path)),
            ("data.image_size", e.synthetic.image_size.to_string()),
            ("data.n_train", e.n_train.to_string()),
            ("data.n_eval", e.n_eval.to_string()),
        ];
        let chain: Vec<(String, String)> = ATTRIBUTE_NAMES
            .iter()
            .zip(&e.synthetic.chain)
            .map(|(n, node)| Ok((format!("data.chain.{n}"), chain_value(node)?)))
            .collect::<Result<_>>()?;
        out.extend([
            ("condition.kind", e.condition.kind.to_string()),
            ("condition.mode", e.condition.mode.to_string()),
            ("condition.embed_dim", e.condition.embed_dim.to_string()),
            ("condition.table", path(&self.table_path)),
            ("gcn.widths", widths),
            ("gcn.x0_trainable", e.gcn_x0_trainable.to_string()),
            ("training.mode", e.training.to_string()),
            ("training.pretrain_steps", e.pretrain_steps.to_string()),
            ("mtl.enabled", e.mtl_enabled.to_string()),
            ("mtl.lambda", e.weights.lambda_mtl.to_string()),
            ("net.gen_width", e.gen_width.to_string()),
            ("net.disc_width", e.disc_width.to_string()),
            ("net.injection", e.injection.to_string()),
            ("loss.alpha1", e.weights.alpha1.to_string()),
            ("loss.alpha2", e.weights.alpha2.to_string()),
            ("loss.alpha3", e.weights.alpha3.to_string()),
            ("loss.lambda_gp", e.weights.lambda_gp.to_string()),
            ("optim.lr", e.adam.lr.to_string()),
            ("optim.beta1", e.adam.beta1.to_string()),
            ("optim.beta2", e.adam.beta2.to_string()),
            ("train.steps", e.steps.to_string()),
            ("train.batch", e.batch.to_string()),
            ("train.n_critic", e.n_critic.to_string()),
            ("train.target_policy", e.target_policy.to_string()),
            ("eval.every", e.eval_every.to_string()),
            ("eval.images", e.eval_images.to_string()),
            ("checkpoint.every", e.checkpoint_every.to_string()),
            ("classifier.width", e.classifier.width.to_string()),
            ("classifier.feature_dim", e.classifier.feature_dim.to_string()),
            ("classifier.steps", e.classifier.steps.to_string()),
            ("classifier.batch", e.classifier.batch.to_string()),
            ("classifier.lr", e.classifier.lr.to_string()),
            ("output.dir", self.output_dir.display().to_string()),
        ]);
        let mut all: Vec<(String, String)> = out[..5].iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        all.extend(chain);
        all.extend(out[5..].iter().map(|(k, v)| (k.to_string(), v.clone())));
        Ok(all)
    }

    pub fn snapshot(&self) -> Result<String> {
        Ok(self.entries()?.iter().map(|(k, v)| format!("{k} = {v}\n")).collect())
    }

    fn hash_without(&self, skip: &[&str]) -> Result<String> {
        let mut h = Sha256::new();
        for (k, v) in self.entries()? {
            if !skip.contains(&k.as_str()) {
                h.update(format!("{k} = {v}\n"));
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// SHA-256 of the snapshot without `output.dir`, as hex.
    pub fn hash(&self) -> Result<String> {
        self.hash_without(&["output.dir"])
    }

    /// Hash of the keys that shape the training trajectory. Runs that agree
    /// on it may continue each other's checkpoints.
    pub fn trajectory_hash(&self) -> Result<String> {
        self.hash_without(&["output.dir", "train.steps", "eval.every", "eval.images", "checkpoint.every"])
    }

    /// The keys that define the dataset, for comparing runs.
    pub fn data_identity(&self) -> Result<Vec<(String, String)>> {
        Ok(self
            .entries()?
            .into_iter()
            .filter(|(k, _)| k.starts_with("data."))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use attrgraph_core::condition::{ConditionKind, ConditionMode};

    #[test]
    fn snapshot_round_trips() {
        let text = "seed = 3\ncondition.kind = one_hot # baseline\ncondition.mode = std\ngcn.widths = 4, 2\n\
                    data.chain.stripe = bright_bg:0.6,0.1\nmtl.enabled = false\n";
        let c = RunConfig::parse(text, Path::new("x.cfg")).unwrap();
        assert_eq!(c.experiment.seed, 3);
        assert_eq!(c.experiment.condition.kind, ConditionKind::OneHot);
        assert_eq!(c.experiment.condition.mode, ConditionMode::Std);
        assert_eq!(c.experiment.gcn_widths, vec![4, 2]);
        let back = RunConfig::parse(&c.snapshot().unwrap(), Path::new("snap")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.experiment.steps += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.trajectory_hash().unwrap(), b.trajectory_hash().unwrap());
        b.experiment.seed = 9;
        assert_ne!(a.trajectory_hash().unwrap(), b.trajectory_hash().unwrap());
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for text in ["nope = 1", "seed = x", "condition.kind = pixels", "train.batch = 0", "seed"] {
            let e = RunConfig::parse(text, Path::new("c")).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }
}
