use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mhadapter_core::adapter::{AdapterConfig, AdapterParams};
use mhadapter_core::dataio::{save_checkpoint, CheckpointMeta};
use mhadapter_core::rng::{stream, Stream};

fn mhadapter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhadapter")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mhadapter(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let mut args = vec!["synth", "--out", data.to_str().unwrap()];
        args.extend_from_slice(extra);
        ok(&args);
        Self { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> String {
        self.root.join(rel).display().to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) -> String {
        let (e, l, w, o) = (
            self.p("data/embeddings.mhe1"),
            self.p("data/labels.csv"),
            self.p("data/class_weights.mhe1"),
            self.p(out),
        );
        let mut args = vec!["train", "--embeddings", &e, "--labels", &l, "--class-weights", &w, "--out", &o];
        args.extend_from_slice(extra);
        ok(&args)
    }

    fn eval_args(&self, checkpoint: &str, out: &str) -> Vec<String> {
        [
            "eval",
            "--checkpoint",
            &self.p(checkpoint),
            "--embeddings",
            &self.p("data/embeddings.mhe1"),
            "--labels",
            &self.p("data/labels.csv"),
            "--class-weights",
            &self.p("data/class_weights.mhe1"),
            "--out",
            &self.p(out),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn eval(&self, checkpoint: &str, out: &str, extra: &[&str]) -> Output {
        let mut args = self.eval_args(checkpoint, out);
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        mhadapter(&refs)
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.root.join(rel)).unwrap()
    }
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_labels_is_a_usage_error() {
    let out = mhadapter(&["train", "--embeddings", "e.mhe1", "--class-weights", "w.mhe1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--labels") && err.contains("Usage"), "{err}");
}

#[test]
fn glare_preset_populates_the_run() {
    let f = Fixture::new(&["--samples", "40"]);
    f.train("run", &["--attribute", "glare", "--max-epochs", "3"]);
    let m = manifest(&f.root.join("run/manifest.json"));
    let c = &m["settings"]["config"];
    assert_eq!(c["alpha"], 0.8);
    assert_eq!(c["heads"], 4);
    assert_eq!(c["weighting"], "uniform");
    assert_eq!(c["bottleneck"], 8);
    assert_eq!(m["settings"]["attribute"], "glare");
    assert_eq!(m["seed"], 42);

    f.train("q", &["--attribute", "Quality", "--heads", "8", "--max-epochs", "2"]);
    let c = manifest(&f.root.join("q/manifest.json"))["settings"]["config"].clone();
    assert_eq!((c["alpha"].as_f64(), c["heads"].as_u64()), (Some(0.2), Some(8)));
    assert_eq!(c["weighting"], "inverse");
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let f = Fixture::new(&["--samples", "20"]);
    let (e, l, w) = (
        f.p("data/embeddings.mhe1"),
        f.p("data/labels.csv"),
        f.p("data/class_weights.mhe1"),
    );
    let base = ["train", "--embeddings", &e, "--labels", &l, "--class-weights", &w];
    for extra in [
        vec!["--attribute", "colour"],
        vec!["--alpha", "1.5"],
        vec!["--heads", "3"],
        vec!["--weighting", "balanced"],
        vec!["--val-fraction", "1"],
    ] {
        let mut args = base.to_vec();
        args.extend(extra.iter());
        assert_eq!(mhadapter(&args).status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn missing_input_is_a_data_error() {
    let f = Fixture::new(&["--samples", "20"]);
    f.train("run", &["--max-epochs", "1"]);
    let mut args = f.eval_args("run/checkpoint.mhc1", "ev");
    args[4] = f.p("data/nope.mhe1");
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(mhadapter(&refs).status.code(), Some(3));
}

#[test]
fn eval_reports_percentages_and_files() {
    let f = Fixture::new(&[]);
    let log = f.train("run", &[]);
    assert!(log.contains("best epoch"));
    let out = f.eval("run/checkpoint.mhc1", "ev", &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["accuracy", "macro_f1", "weighted_f1", "adjusted_balanced_accuracy"] {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        assert!(line.ends_with(" 100.00"), "{line}");
    }
    for file in ["metrics.json", "confusion.csv", "per_class.csv", "manifest.json"] {
        assert!(f.root.join("ev").join(file).exists(), "{file}");
    }
}

#[test]
fn best_epoch_in_checkpoint_matches_log() {
    let f = Fixture::new(&["--samples", "60"]);
    f.train("run", &["--max-epochs", "12"]);
    let log = f.read("run/train.log");
    let best_rows: Vec<&str> = log.lines().skip(1).filter(|l| l.ends_with(",1")).collect();
    let last_best: u32 = best_rows.last().unwrap().split(',').next().unwrap().parse().unwrap();
    let (_, meta) = mhadapter_core::dataio::load_checkpoint(&f.root.join("run/checkpoint.mhc1")).unwrap();
    assert_eq!(meta.epoch, last_best);
    let acc: f64 = best_rows.last().unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(meta.best_val_accuracy, acc);
}

#[test]
fn alpha_zero_override_is_the_zero_shot_report() {
    let f = Fixture::new(&["--samples", "80"]);
    f.train("r1", &["--seed", "1", "--max-epochs", "4"]);
    f.train("r2", &["--seed", "2", "--max-epochs", "6", "--heads", "8"]);
    assert_ne!(fs::read(f.root.join("r1/checkpoint.mhc1")).unwrap(), fs::read(f.root.join("r2/checkpoint.mhc1")).unwrap());
    assert!(f.eval("r1/checkpoint.mhc1", "z1", &["--alpha-override", "0"]).status.success());
    assert!(f.eval("r2/checkpoint.mhc1", "z2", &["--alpha-override", "0"]).status.success());
    for file in ["metrics.json", "confusion.csv", "per_class.csv"] {
        assert_eq!(f.read(&format!("z1/{file}")), f.read(&format!("z2/{file}")), "{file}");
    }
    assert_eq!(f.eval("r1/checkpoint.mhc1", "z3", &["--alpha-override", "2"]).status.code(), Some(2));
}

#[test]
fn metrics_recomputed_from_confusion_csv() {
    let f = Fixture::new(&["--samples", "120", "--classes", "5"]);
    f.train("run", &["--max-epochs", "2", "--seed", "3"]);
    assert!(f.eval("run/checkpoint.mhc1", "ev", &[]).status.success());
    let csv = f.read("ev/confusion.csv");
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|c| c.parse().unwrap()).collect())
        .collect();
    let k = rows.len();
    let n: f64 = rows.iter().flatten().sum();
    let col = |j: usize| rows.iter().map(|r| r[j]).sum::<f64>();
    let (mut f1s, mut recalls, mut supports) = (vec![], vec![], vec![]);
    for i in 0..k {
        let support: f64 = rows[i].iter().sum();
        let p = if col(i) > 0.0 { rows[i][i] / col(i) } else { 0.0 };
        let r = if support > 0.0 { rows[i][i] / support } else { 0.0 };
        f1s.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        recalls.push(r);
        supports.push(support);
    }
    let acc = (0..k).map(|i| rows[i][i]).sum::<f64>() / n;
    let macro_f1 = f1s.iter().sum::<f64>() / k as f64;
    let weighted: f64 = f1s.iter().zip(&supports).map(|(f, s)| f * s / n).sum();
    let kf = k as f64;
    let aba = (recalls.iter().sum::<f64>() / kf - 1.0 / kf) / (1.0 - 1.0 / kf);
    let m = manifest(&f.root.join("ev/metrics.json"));
    for (key, want) in [("accuracy", acc), ("macro_f1", macro_f1), ("weighted_f1", weighted), ("adjusted_balanced_accuracy", aba)] {
        let got = m[key].as_f64().unwrap();
        assert!((got - want).abs() <= 1e-12, "{key}: {got} vs {want}");
    }
    assert_eq!(m["n_samples"].as_f64().unwrap(), n);
}

#[test]
fn checkpoint_width_mismatch_is_a_data_error() {
    let f = Fixture::new(&["--samples", "20", "--dim", "16"]);
    let cfg = AdapterConfig::for_dim(32);
    let params = AdapterParams::<f32>::init(cfg, &mut stream(0, Stream::Init)).unwrap();
    save_checkpoint(&params, &CheckpointMeta { epoch: 0, best_val_accuracy: 0.0 }, &f.root.join("c.mhc1")).unwrap();
    let out = f.eval("c.mhc1", "ev", &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gradcheck_exit_codes() {
    let out = mhadapter(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("ok")).count(), 20);

    let out = mhadapter(&["gradcheck", "--dims", "1,8,2,4", "--trials", "5"]);
    assert_eq!(out.status.code(), Some(0));

    let out = mhadapter(&["gradcheck", "--trials", "3", "--inject-fault", "w_q"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("w_q"));

    assert_eq!(mhadapter(&["gradcheck", "--dims", "1,8,2"]).status.code(), Some(2));
}

#[test]
fn attention_grid_export() {
    let f = Fixture::new(&["--samples", "4", "--dim", "8", "--patches", "196", "--views", "1"]);
    let mut params = AdapterParams::<f32>::init(AdapterConfig::for_dim(8), &mut stream(0, Stream::Init)).unwrap();
    let ck = f.root.join("c.mhc1");
    save_checkpoint(&params, &CheckpointMeta { epoch: 0, best_val_accuracy: 0.0 }, &ck).unwrap();
    let args = |out: &str, id: &str| {
        vec![
            "attention".to_string(),
            "--checkpoint".into(),
            ck.display().to_string(),
            "--embeddings".into(),
            f.p("data/embeddings.mhe1"),
            "--image-id".into(),
            id.into(),
            "--out".into(),
            f.p(out),
        ]
    };
    let run = |a: Vec<String>| mhadapter(&a.iter().map(String::as_str).collect::<Vec<_>>());

    assert!(run(args("att", "img0001")).status.success());
    let grid: Vec<Vec<f64>> = f
        .read("att/attention.csv")
        .lines()
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(grid.len(), 14);
    assert!(grid.iter().all(|r| r.len() == 14));
    let total: f64 = grid.iter().flatten().sum();
    assert!((total - 1.0).abs() < 1e-6, "{total}");
    assert!(f.root.join("att/manifest.json").exists());

    params.tensors.w_q.fill(0.0);
    params.tensors.w_k.fill(0.0);
    save_checkpoint(&params, &CheckpointMeta { epoch: 0, best_val_accuracy: 0.0 }, &ck).unwrap();
    assert!(run(args("uni", "img0002")).status.success());
    for cell in f.read("uni/attention.csv").lines().flat_map(|l| l.split(',').map(str::to_owned).collect::<Vec<_>>()) {
        let v: f64 = cell.parse().unwrap();
        assert!((v - 1.0 / 196.0).abs() < 1e-6, "{v}");
    }

    assert_eq!(run(args("x", "missing")).status.code(), Some(3));
}

#[test]
fn params_counts() {
    let out = ok(&["params"]);
    assert!(out.starts_with("trainable parameters: 1,180,672\n"), "{out}");
    assert!(ok(&["params", "--bias"]).contains("1,183,360"));
    assert!(ok(&["params", "--bottleneck", "320", "--no-bias"]).contains("1,377,280"));
    assert!(ok(&["params", "--bias", "--no-bias", "--bottleneck", "320"]).contains("1,377,280"));
    let out = mhadapter(&["params", "--heads", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible"));
    assert_eq!(mhadapter(&["params", "--bottleneck", "0"]).status.code(), Some(2));
}

#[test]
fn replay_reproduces_a_run() {
    let f = Fixture::new(&["--samples", "60"]);
    f.train("run", &["--max-epochs", "5", "--attribute", "reflection"]);
    ok(&["replay", "--manifest", &f.p("run/manifest.json"), "--out", &f.p("again")]);
    for file in ["checkpoint.mhc1", "train.log", "manifest.json"] {
        assert_eq!(
            fs::read(f.root.join("run").join(file)).unwrap(),
            fs::read(f.root.join("again").join(file)).unwrap(),
            "{file}"
        );
    }

    assert!(f.eval("run/checkpoint.mhc1", "ev", &[]).status.success());
    ok(&["replay", "--manifest", &f.p("ev/manifest.json"), "--out", &f.p("ev2")]);
    assert_eq!(f.read("ev/metrics.json"), f.read("ev2/metrics.json"));
    assert_eq!(f.read("ev/manifest.json"), f.read("ev2/manifest.json"));

    fs::write(f.root.join("data/labels.csv"), "image_id,label\n").unwrap();
    let out = mhadapter(&["replay", "--manifest", &f.p("run/manifest.json"), "--out", &f.p("x")]);
    assert_eq!(out.status.code(), Some(3));
}
