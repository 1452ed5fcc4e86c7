//! Experiment runner: data loading, the training loop and run outputs.
//!
//! A run directory contains `config.snapshot`, `run.meta`, `losses.csv`,
//! `eval_<step>.csv` files, `checkpoints/step_<step>.ckpt` and sample grids
//! under `samples/`. Restarting from a checkpoint truncates `losses.csv` to
//! the checkpointed step and appends from there, so an interrupted and
//! resumed run writes the same bytes as an uninterrupted one.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use attrgraph_core::condition::EmbeddingTable;
use attrgraph_core::cooccurrence::AttributeVector;
use attrgraph_core::dataset::Dataset;
use attrgraph_core::losses::PENALTY_METHOD;
use attrgraph_core::metrics::{ReferenceClassifier, SSIM_SIGMA, SSIM_WINDOW};
use attrgraph_core::train::{synthetic_splits, EvalReport, Experiment, LossRow, TrainState};

use crate::checkpoint::{restore_state, restore_store, state_archive, Archive};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{parse_embedding_table, read_text, write_text};
use crate::images::{load_dataset, tile, write_png};

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const META_FILE: &str = "run.meta";
pub const LOSSES_FILE: &str = "losses.csv";
pub const NAN_DUMP_FILE: &str = "nan_dump.txt";
const GRID_ROWS: usize = 8;

pub fn eval_file(step: u64) -> String {
    format!("eval_{step}.csv")
}

pub fn checkpoint_file(step: u64) -> PathBuf {
    Path::new("checkpoints").join(format!("step_{step}.ckpt"))
}

/// Train and eval splits as configured: the synthetic stream, or the first
/// `n_train` and next `n_eval` images of a dataset directory.
pub fn load_splits(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let e = &config.experiment;
    let Some(dir) = &config.data_path else {
        return Ok(synthetic_splits(e)?);
    };
    let all = load_dataset(dir, e.synthetic.image_size)?;
    if all.len() < e.n_train + e.n_eval {
        return Err(Error::Config(format!(
            "{} holds {} images, n_train + n_eval = {}",
            dir.display(),
            all.len(),
            e.n_train + e.n_eval
        )));
    }
    let part = |range: std::ops::Range<usize>| -> Result<Dataset> {
        let per = all.image_len();
        Ok(Dataset {
            names: all.names.clone(),
            image_size: all.image_size,
            ids: all.ids[range.clone()].to_vec(),
            pixels: all.pixels[range.start * per..range.end * per].to_vec(),
            attributes: all.attributes[range].to_vec(),
        })
    };
    Ok((part(0..e.n_train)?, part(e.n_train..e.n_train + e.n_eval)?))
}

fn load_table(config: &RunConfig) -> Result<Option<EmbeddingTable>> {
    match &config.table_path {
        Some(p) => Ok(Some(parse_embedding_table(&read_text(p)?, p)?)),
        None => Ok(None),
    }
}

/// An experiment ready to train, with its output directory.
pub struct Run {
    pub config: RunConfig,
    pub hash: String,
    pub experiment: Experiment,
    pub state: TrainState,
    /// Held-out accuracy of the reference classifier per attribute.
    pub classifier_accuracy: Vec<f64>,
}

impl Run {
    /// Fresh run: trains the reference classifier and initializes the networks.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (train, eval) = load_splits(&config)?;
        let e = &config.experiment;
        let mut clf = ReferenceClassifier::new(train.image_size, train.names.len(), e.classifier, e.seed)?;
        clf.train(&train, e.seed)?;
        Self::assemble(config, train, eval, clf)
    }

    /// Continue from a checkpoint written by a run with the same configuration.
    pub fn resume(config: RunConfig, checkpoint: &Path) -> Result<Self> {
        config.validate()?;
        let archive = Archive::load(checkpoint)?;
        if archive.meta.get("trajectory_hash") != Some(&config.trajectory_hash()?) {
            return Err(Error::Config(format!("{} was written by a different configuration", checkpoint.display())));
        }
        let (train, eval) = load_splits(&config)?;
        let e = &config.experiment;
        let mut clf = ReferenceClassifier::new(train.image_size, train.names.len(), e.classifier, e.seed)?;
        restore_store(&archive, "classifier/", &mut clf.store, checkpoint)?;
        let mut run = Self::assemble(config, train, eval, clf)?;
        restore_state(&archive, &mut run.state, checkpoint)?;
        Ok(run)
    }

    fn assemble(config: RunConfig, train: Dataset, eval: Dataset, clf: ReferenceClassifier) -> Result<Self> {
        let classifier_accuracy = clf.accuracy(&eval)?;
        let table = load_table(&config)?;
        let (experiment, state) = Experiment::setup(config.experiment.clone(), train, eval, clf, table)?;
        Ok(Self { hash: config.hash()?, config, experiment, state, classifier_accuracy })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn meta_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config_hash = {}", self.hash);
        let _ = writeln!(out, "penalty_method = {PENALTY_METHOD}");
        let _ = writeln!(out, "ssim = gaussian window {SSIM_WINDOW}, sigma {SSIM_SIGMA}, valid region");
        let acc: Vec<String> = self.classifier_accuracy.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "classifier_accuracy = {}", acc.join(","));
        out
    }

    fn checkpoint(&self, step: u64) -> Result<()> {
        let meta = [("config_hash", self.hash.clone()), ("trajectory_hash", self.config.trajectory_hash()?)];
        let archive = state_archive(&self.state, &self.experiment.classifier.store, &meta);
        archive.save(&self.out_dir().join(checkpoint_file(step)))
    }

    /// Evaluate the current state, writing `eval_<step>.csv` and a sample grid.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let report = self.experiment.evaluate(&self.state)?;
        let dir = self.out_dir();
        write_text(&dir.join(eval_file(report.step)), &eval_csv(&self.experiment.eval.names, &self.hash, &report))?;
        self.sample_grid(&dir.join("samples").join(format!("step_{}.png", report.step)))?;
        Ok(report)
    }

    /// One row per evaluation image: source, reconstruction, then one
    /// translation per flipped attribute.
    fn sample_grid(&self, path: &Path) -> Result<()> {
        let exp = &self.experiment;
        let n = GRID_ROWS.min(exp.eval.len());
        let (x, sources) = exp.eval.batch(&(0..n).collect::<Vec<_>>())?;
        let per = exp.eval.image_len();
        let mut columns = vec![x.data().to_vec(), exp.translate(&self.state, &x, &sources, &sources)?.data().to_vec()];
        for a in 0..exp.eval.names.len() {
            let targets: Vec<AttributeVector> = sources
                .iter()
                .map(|s| {
                    let mut t = s.clone();
                    t.set(a, !s.get(a));
                    t
                })
                .collect();
            columns.push(exp.translate(&self.state, &x, &targets, &sources)?.data().to_vec());
        }
        let tiles: Vec<Vec<f64>> =
            (0..n).flat_map(|i| columns.iter().map(move |c| c[i * per..(i + 1) * per].to_vec())).collect();
        let size = exp.eval.image_size;
        let (img, h, w) = tile(&tiles, columns.len(), size);
        write_png(path, &img, h, w)
    }

    fn prepare_losses(&self) -> Result<PathBuf> {
        let path = self.out_dir().join(LOSSES_FILE);
        let mut text = format!("{}\n", LossRow::HEADER);
        if self.state.step > 0 {
            let old = read_text(&path)?;
            for line in old.lines().skip(1) {
                let step: u64 = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
                if step < self.state.step {
                    text.push_str(line);
                    text.push('\n');
                }
            }
        }
        write_text(&path, &text)?;
        Ok(path)
    }

    /// Train up to the configured number of steps, writing every output.
    /// `progress` receives one line per evaluation.
    pub fn execute(&mut self, mut progress: impl FnMut(&str)) -> Result<Vec<EvalReport>> {
        let dir = self.out_dir().to_path_buf();
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        write_text(&dir.join(SNAPSHOT_FILE), &self.config.snapshot()?)?;
        write_text(&dir.join(META_FILE), &self.meta_text())?;
        let losses = self.prepare_losses()?;
        let mut file = OpenOptions::new().append(true).open(&losses).map_err(Error::io(&losses))?;

        let cfg = self.config.experiment.clone();
        let total = cfg.steps as u64;
        let mut reports = Vec::new();
        let mut last: Option<LossRow> = None;
        while self.state.step < total {
            let row = match self.experiment.train_step(&mut self.state) {
                Ok(row) => row,
                Err(e @ attrgraph_core::Error::NonFinite(_)) => {
                    self.nan_dump(last.as_ref(), &e)?;
                    return Err(e.into());
                }
                Err(e) => return Err(e.into()),
            };
            writeln!(file, "{}", csv_row(&row)).map_err(Error::io(&losses))?;
            last = Some(row);
            let step = self.state.step;
            if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every as u64) || step == total {
                self.checkpoint(step)?;
            }
            if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every as u64) || step == total {
                let r = self.evaluate()?;
                progress(&format!(
                    "step {step}: tarr {} oracle {} psnr {:.3} ssim {:.4}",
                    fmt_opt(r.tarr.mean),
                    fmt_opt(r.oracle_tarr.mean),
                    r.psnr,
                    r.ssim
                ));
                reports.push(r);
            }
        }
        Ok(reports)
    }

    fn nan_dump(&self, last: Option<&LossRow>, error: &attrgraph_core::Error) -> Result<()> {
        let mut out = format!("error: {error}\nstep: {}\n", self.state.step);
        match last {
            Some(r) => {
                let _ = writeln!(out, "last finite row:\n{}\n{}", LossRow::HEADER, csv_row(r));
            }
            None => out.push_str("no finite row before the failure\n"),
        }
        out.push_str("parameters (name, shape, finite, max |value|, max |grad|):\n");
        for e in self.state.store.entries() {
            let finite = e.value.iter().chain(&e.grad).all(|v| v.is_finite());
            let max = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let _ = writeln!(out, "{} {:?} {finite} {} {}", e.name, e.shape, max(&e.value), max(&e.grad));
        }
        write_text(&self.out_dir().join(NAN_DUMP_FILE), &out)?;
        self.checkpoint(self.state.step)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn csv_row(r: &LossRow) -> String {
    let mut s = r.step.to_string();
    for v in r.values() {
        let _ = write!(s, ",{v}");
    }
    s
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn eval_header(names: &[String]) -> String {
    let per: Vec<String> = names.iter().map(|n| format!("tarr_{n}")).collect();
    format!("step,config_hash,{},tarr_mean,oracle_tarr_mean,psnr,ssim", per.join(","))
}

pub fn eval_csv(names: &[String], hash: &str, r: &EvalReport) -> String {
    let per: Vec<String> = r.tarr.per_attribute.iter().map(|v| opt_cell(*v)).collect();
    format!(
        "{}\n{},{hash},{},{},{},{},{}\n",
        eval_header(names),
        r.step,
        per.join(","),
        opt_cell(r.tarr.mean),
        opt_cell(r.oracle_tarr.mean),
        r.psnr,
        r.ssim
    )
}

/// The metrics of one `eval_<step>.csv` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub config_hash: String,
    pub tarr: Vec<Option<f64>>,
    pub tarr_mean: Option<f64>,
    pub oracle_tarr_mean: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn parse_eval_csv(text: &str, path: &Path) -> Result<EvalRecord> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::parse(path, 1, "empty eval file"))?;
    let row = lines.next().ok_or_else(|| Error::parse(path, 2, "missing eval row"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let cells: Vec<&str> = row.split(',').collect();
    if cols.len() != cells.len() || cols.len() < 6 {
        return Err(Error::parse(path, 2, "row does not match the header"));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::parse(path, 2, format!("bad number `{s}`"))) };
    let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
    let n = cols.len();
    Ok(EvalRecord {
        step: cells[0].parse().map_err(|_| Error::parse(path, 2, "bad step"))?,
        config_hash: cells[1].to_string(),
        tarr: cells[2..n - 4].iter().map(|s| opt(s)).collect::<Result<_>>()?,
        tarr_mean: opt(cells[n - 4])?,
        oracle_tarr_mean: opt(cells[n - 3])?,
        psnr: num(cells[n - 2])?,
        ssim: num(cells[n - 1])?,
    })
}

/// All evaluation records of a run directory, ordered by step.
pub fn read_evals(dir: &Path) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("eval_") && name.ends_with(".csv") {
            out.push(parse_eval_csv(&read_text(&path)?, &path)?);
        }
    }
    out.sort_by_key(|r| r.step);
    Ok(out)
}
