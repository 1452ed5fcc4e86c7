use std::fs;
use std::path::Path;
use std::process::Command;

use attrgraph::checkpoint::Archive;
use attrgraph::config::RunConfig;
use attrgraph::run::{checkpoint_file, read_evals, Run, LOSSES_FILE, NAN_DUMP_FILE, SNAPSHOT_FILE};

const TINY: &str = "\
seed = 4
data.image_size = 16
data.n_train = 48
data.n_eval = 8
condition.kind = gcn_reprs
condition.mode = diff
condition.embed_dim = 4
gcn.widths = 6,4
net.gen_width = 4
net.disc_width = 4
train.steps = 4
train.batch = 4
train.n_critic = 2
eval.every = 2
eval.images = 4
checkpoint.every = 2
classifier.steps = 5
classifier.batch = 8
";

fn tiny(dir: &Path) -> RunConfig {
    let mut c = RunConfig::parse(TINY, Path::new("tiny.cfg")).unwrap();
    c.output_dir = dir.to_path_buf();
    c
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_attrgraph"))
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::new(tiny(dir.path())).unwrap();
    let reports = run.execute(|_| {}).unwrap();
    assert_eq!(reports.iter().map(|r| r.step).collect::<Vec<_>>(), [2, 4]);
    let out = dir.path();
    for f in [SNAPSHOT_FILE, LOSSES_FILE, "run.meta", "eval_2.csv", "eval_4.csv", "samples/step_4.png"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(out.join(checkpoint_file(4)).is_file());
    let losses = fs::read_to_string(out.join(LOSSES_FILE)).unwrap();
    assert_eq!(losses.lines().count(), 5);
    let snapshot = RunConfig::from_file(&out.join(SNAPSHOT_FILE)).unwrap();
    assert_eq!(snapshot, tiny(out));
    let evals = read_evals(out).unwrap();
    assert_eq!(evals[1].config_hash, snapshot.hash().unwrap());
    assert!(evals[1].psnr.is_finite());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Run::new(tiny(a.path())).unwrap().execute(|_| {}).unwrap();

    let mut half = tiny(b.path());
    half.experiment.steps = 2;
    Run::new(half).unwrap().execute(|_| {}).unwrap();
    // Leftover rows past the checkpoint must be dropped on resume.
    let mut f = fs::OpenOptions::new().append(true).open(b.path().join(LOSSES_FILE)).unwrap();
    std::io::Write::write_all(&mut f, b"2,9,9,9,9,9,9,9,9\n").unwrap();
    let mut resumed = Run::resume(tiny(b.path()), &b.path().join(checkpoint_file(2))).unwrap();
    resumed.execute(|_| {}).unwrap();

    for f in [LOSSES_FILE, "eval_4.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let (x, y) = (
        Archive::load(&a.path().join(checkpoint_file(4))).unwrap(),
        Archive::load(&b.path().join(checkpoint_file(4))).unwrap(),
    );
    assert_eq!(x, y);
}

#[test]
fn resume_rejects_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    Run::new(tiny(dir.path())).unwrap().execute(|_| {}).unwrap();
    let mut other = tiny(dir.path());
    other.experiment.weights.alpha3 = 5.0;
    let err = Run::resume(other, &dir.path().join(checkpoint_file(2))).err().unwrap();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "train.steps = many\n").unwrap();
    let status = bin().args(["train", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // An absurd learning rate overflows the parameters within a few steps.
    let cfg = dir.path().join("nan.cfg");
    fs::write(&cfg, format!("{TINY}optim.lr = 1e300\ntrain.steps = 20\n")).unwrap();
    let out = dir.path().join("nan");
    let status = bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(3));
    let dump = fs::read_to_string(out.join(NAN_DUMP_FILE)).unwrap();
    assert!(dump.contains("generator.enc0.w"));
}

#[test]
fn cli_data_and_cooccurrence_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let ok = bin().args(["generate-data", "--count", "56", "--config"]).arg(&cfg).arg("--out").arg(&data).status().unwrap();
    assert!(ok.success());
    let matrix = dir.path().join("c.txt");
    let ok = bin()
        .arg("build-cooccurrence")
        .arg(data.join("list_attr.txt"))
        .arg("--out")
        .arg(&matrix)
        .output()
        .unwrap();
    assert!(ok.status.success());
    let text = fs::read_to_string(&matrix).unwrap();
    assert!(text.starts_with("bright_bg disk stripe disk_color\n"));

    // Training from the PNG directory reads the same labels as the stream.
    let mut from_disk = tiny(&dir.path().join("run"));
    from_disk.data_path = Some(data);
    let (train, eval) = attrgraph::run::load_splits(&from_disk).unwrap();
    let (t2, e2) = attrgraph::run::load_splits(&tiny(dir.path())).unwrap();
    assert_eq!(train.attributes, t2.attributes);
    assert_eq!(eval.attributes, e2.attributes);

    let ckpt_run = dir.path().join("r");
    Run::new(tiny(&ckpt_run)).unwrap().execute(|_| {}).unwrap();
    let out = bin().arg("inspect-checkpoint").arg(ckpt_run.join(checkpoint_file(4))).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("step = 4"));
}
