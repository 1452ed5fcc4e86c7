//! Multi-seed comparison of configurations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::run::{read_evals, EvalRecord, Run};

/// Mean and spread of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { mean, min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// Final evaluation of one configuration for every seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigResult {
    pub label: String,
    pub seeds: Vec<u64>,
    /// Final evaluation per seed, in `seeds` order.
    pub finals: Vec<EvalRecord>,
    /// Every evaluation per seed, ordered by step.
    pub histories: Vec<Vec<EvalRecord>>,
}

impl ConfigResult {
    pub fn tarr(&self) -> Vec<f64> {
        self.finals.iter().map(|r| r.tarr_mean.unwrap_or(f64::NAN)).collect()
    }

    pub fn psnr(&self) -> Vec<f64> {
        self.finals.iter().map(|r| r.psnr).collect()
    }

    pub fn ssim(&self) -> Vec<f64> {
        self.finals.iter().map(|r| r.ssim).collect()
    }
}

/// Run directory of one configuration and seed below `root`.
pub fn run_dir(root: &Path, label: &str, seed: u64) -> PathBuf {
    root.join(label).join(format!("seed_{seed}"))
}

/// Configurations being compared must read the same data.
pub fn check_compatible(configs: &[(String, RunConfig)]) -> Result<()> {
    let Some((first_label, first)) = configs.first() else {
        return Err(Error::Config("no configurations to compare".into()));
    };
    let reference = first.data_identity()?;
    for (label, c) in &configs[1..] {
        if c.data_identity()? != reference {
            return Err(Error::Config(format!("`{label}` and `{first_label}` use different datasets")));
        }
    }
    Ok(())
}

/// Train every configuration under every seed (skipping runs whose final
/// evaluation already exists) and collect the results.
pub fn run_grid(
    configs: &[(String, RunConfig)],
    seeds: &[u64],
    root: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Vec<ConfigResult>> {
    if seeds.is_empty() {
        return Err(Error::Config("the seed list is empty".into()));
    }
    check_compatible(configs)?;
    let mut results = Vec::new();
    for (label, base) in configs {
        let mut result = ConfigResult { label: label.clone(), seeds: seeds.to_vec(), finals: vec![], histories: vec![] };
        for &seed in seeds {
            let mut config = base.clone();
            config.experiment.seed = seed;
            config.output_dir = run_dir(root, label, seed);
            let hash = config.hash()?;
            let steps = config.experiment.steps as u64;
            let done = |evals: &[EvalRecord]| evals.last().is_some_and(|r| r.step == steps && r.config_hash == hash);
            let mut evals = if config.output_dir.is_dir() { read_evals(&config.output_dir)? } else { vec![] };
            if !done(&evals) {
                progress(&format!("{label} seed {seed}: training"));
                let mut run = Run::new(config.clone())?;
                run.execute(|line| progress(&format!("{label} seed {seed}: {line}")))?;
                evals = read_evals(&config.output_dir)?;
            }
            evals.retain(|r| r.config_hash == hash);
            let last = evals.last().cloned().ok_or_else(|| Error::Config(format!("{label} seed {seed}: no evaluation")))?;
            result.finals.push(last);
            result.histories.push(evals);
        }
        results.push(result);
    }
    Ok(results)
}

fn cell(s: Option<Spread>, digits: usize) -> String {
    match s {
        Some(s) => format!("{:.d$} ± {:.d$}", s.mean, s.range() / 2.0, d = digits),
        None => "-".into(),
    }
}

/// Markdown table: mean ± half range over seeds.
pub fn markdown(results: &[ConfigResult]) -> String {
    let mut out = String::from("| config | seeds | TARR | PSNR | SSIM |\n|---|---|---|---|---|\n");
    for r in results {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.label,
            r.seeds.len(),
            cell(Spread::of(&r.tarr()), 4),
            cell(Spread::of(&r.psnr()), 2),
            cell(Spread::of(&r.ssim()), 4)
        );
    }
    out
}

pub fn csv(results: &[ConfigResult]) -> String {
    let mut out = String::from("config,seeds,tarr_mean,tarr_min,tarr_max,psnr_mean,psnr_min,psnr_max,ssim_mean,ssim_min,ssim_max\n");
    for r in results {
        let _ = write!(out, "{},{}", r.label, r.seeds.len());
        for values in [r.tarr(), r.psnr(), r.ssim()] {
            match Spread::of(&values) {
                Some(s) => {
                    let _ = write!(out, ",{},{},{}", s.mean, s.min, s.max);
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(tarr: f64) -> EvalRecord {
        EvalRecord {
            step: 1,
            config_hash: "h".into(),
            tarr: vec![Some(tarr)],
            tarr_mean: Some(tarr),
            oracle_tarr_mean: Some(tarr),
            psnr: 20.0,
            ssim: 0.5,
        }
    }

    #[test]
    fn spread_and_tables() {
        let s = Spread::of(&[0.2, 0.6, 0.4]).unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!((s.range() - 0.4).abs() < 1e-15);
        assert!(Spread::of(&[]).is_none());
        let r = ConfigResult { label: "x".into(), seeds: vec![1, 2], finals: vec![record(0.5), record(0.7)], histories: vec![] };
        assert!(markdown(std::slice::from_ref(&r)).contains("| x | 2 | 0.6000 ± 0.1000 |"));
        assert!(csv(&[r]).lines().nth(1).unwrap().starts_with("x,2,0.6"));
    }

    #[test]
    fn empty_seed_list_and_mismatched_data_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunConfig::default();
        let e = run_grid(&[("a".into(), a.clone())], &[], dir.path(), |_| {}).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let mut b = a.clone();
        b.experiment.n_train += 1;
        let e = run_grid(&[("a".into(), a), ("b".into(), b)], &[1], dir.path(), |_| {}).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
