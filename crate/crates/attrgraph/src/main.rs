use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrgraph::checkpoint::Archive;
use attrgraph::compare::{csv, markdown, run_grid};
use attrgraph::config::RunConfig;
use attrgraph::formats::{read_annotations, write_matrix, write_text};
use attrgraph::images::write_dataset;
use attrgraph::run::Run;
use attrgraph::{Error, Result};
use attrgraph_core::cooccurrence::build_cooccurrence;
use attrgraph_core::dataset::generate_dataset;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attrgraph", version, about = "Attribute-graph conditioned image translation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset to PNG files and an annotation file.
    GenerateData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of images (defaults to n_train + n_eval).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Estimate the co-occurrence matrix of an annotation file.
    BuildCooccurrence {
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the row-normalized adjacency here.
        #[arg(long)]
        normalized: Option<PathBuf>,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train several configurations over several seeds and tabulate them.
    Compare {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the metadata and tensor list of a checkpoint.
    InspectCheckpoint { checkpoint: PathBuf },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenerateData { config, out, count } => {
            let config = load_config(config.as_deref())?;
            let e = &config.experiment;
            let n = count.unwrap_or(e.n_train + e.n_eval);
            let samples = generate_dataset(&e.synthetic, n, e.seed)?;
            write_dataset(&out, &e.synthetic.names(), e.synthetic.image_size, &samples)?;
            println!("wrote {n} images to {}", out.display());
        }
        Command::BuildCooccurrence { annotations, out, normalized } => {
            let a = read_annotations(&annotations)?;
            let m = build_cooccurrence(&a.names, &a.vectors())?;
            write_text(&out, &write_matrix(&m.names, &m.c))?;
            if let Some(path) = normalized {
                write_text(&path, &write_matrix(&m.names, &m.c_hat))?;
            }
            print!("{}", write_matrix(&m.names, &m.c));
        }
        Command::Train { config, resume, out } => {
            let mut config = RunConfig::from_file(&config)?;
            if let Some(out) = out {
                config.output_dir = out;
            }
            let mut run = match resume {
                Some(ckpt) => Run::resume(config, &ckpt)?,
                None => Run::new(config)?,
            };
            eprintln!("classifier accuracy: {:?}", run.classifier_accuracy);
            run.execute(|line| eprintln!("{line}"))?;
            println!("run written to {}", run.out_dir().display());
        }
        Command::Eval { config, checkpoint } => {
            let config = RunConfig::from_file(&config)?;
            let run = Run::resume(config, &checkpoint)?;
            let r = run.evaluate()?;
            println!("step {}", r.step);
            for (name, v) in run.experiment.eval.names.iter().zip(&r.tarr.per_attribute) {
                println!("tarr {name}: {}", v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()));
            }
            println!("tarr mean: {:?}\noracle tarr mean: {:?}\npsnr: {:.4}\nssim: {:.4}", r.tarr.mean, r.oracle_tarr.mean, r.psnr, r.ssim);
        }
        Command::Compare { configs, seeds, out } => {
            let labeled = configs
                .iter()
                .map(|p| {
                    let label = p.file_stem().and_then(|s| s.to_str()).unwrap_or("config").to_string();
                    Ok((label, RunConfig::from_file(p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let results = run_grid(&labeled, &seeds, &out, |line| eprintln!("{line}"))?;
            let table = markdown(&results);
            write_text(&out.join("comparison.md"), &table)?;
            write_text(&out.join("comparison.csv"), &csv(&results))?;
            print!("{table}");
        }
        Command::InspectCheckpoint { checkpoint } => {
            let a = Archive::load(&checkpoint)?;
            for (k, v) in &a.meta {
                println!("{k} = {v}");
            }
            let mut total = 0;
            for t in &a.tensors {
                let norm = t.data.iter().map(|v| v * v).sum::<f64>().sqrt();
                println!("{} {:?} norm {norm:.6e}", t.name, t.shape);
                total += t.data.len();
            }
            println!("{} tensors, {total} values", a.tensors.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if let Error::Core(attrgraph_core::Error::NonFinite(_)) = e {
                eprintln!("a diagnostic dump was written to the run directory");
            }
            ExitCode::from(code as u8)
        }
    }
}
