use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{container_digests, digest, output_digests, RunManifest};
use super::{EvalArgs, Failure, ReplayArgs, TrainArgs};
use crate::adapter::ClassifierHead;
use crate::dataio::{
    load_checkpoint, read_classifier_weights, read_embedding_container, read_labels, save_checkpoint,
    stratified_split, CheckpointMeta,
};
use crate::metrics::evaluate;
use crate::training::{fit, load_preset, TrainConfig};

/// Fully resolved training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    pub class_weights: PathBuf,
    pub attribute: Option<String>,
    pub val_fraction: f64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub checkpoint: PathBuf,
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    pub class_weights: PathBuf,
    pub alpha_override: Option<f64>,
    pub cosine: bool,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl TrainJob {
    pub fn from_args(a: TrainArgs) -> Result<Self, Failure> {
        let mut config = TrainConfig {
            seed: a.seed,
            use_bias: a.bias,
            cosine: !a.raw_dot,
            ..TrainConfig::default()
        };
        let attribute = match &a.attribute {
            Some(name) => {
                let preset = load_preset(name)?;
                config = config.with_preset(&preset);
                Some(preset.attribute.to_owned())
            }
            None => None,
        };
        if let Some(v) = a.alpha {
            config.alpha = v;
        }
        if let Some(v) = a.heads {
            config.heads = v;
        }
        if let Some(v) = a.weighting {
            config.weighting = v;
        }
        if let Some(v) = a.dropout {
            config.dropout_p = v;
        }
        if let Some(v) = a.max_epochs {
            config.max_epochs = v;
        }
        if let Some(v) = a.patience {
            config.patience = v;
        }
        if let Some(v) = a.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = a.peak_lr {
            config.peak_lr = v;
        }
        config.bottleneck = a.bottleneck;
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(usage(format!("--alpha must be in [0, 1], got {}", config.alpha)));
        }
        if !(0.0..1.0).contains(&config.dropout_p) {
            return Err(usage(format!("--dropout must be in [0, 1), got {}", config.dropout_p)));
        }
        if !(0.0..1.0).contains(&a.val_fraction) {
            return Err(usage(format!("--val-fraction must be in [0, 1), got {}", a.val_fraction)));
        }
        if config.max_epochs <= config.warmup_epochs {
            config.warmup_epochs = config.max_epochs.saturating_sub(1);
        }
        config.validate()?;
        Ok(Self {
            embeddings: a.embeddings,
            labels: a.labels,
            class_weights: a.class_weights,
            attribute,
            val_fraction: a.val_fraction,
            config,
        })
    }
}

pub(super) fn train(args: TrainArgs) -> Result<(), Failure> {
    let out = args.out.clone();
    run_train(TrainJob::from_args(args)?, &out)
}

pub(super) fn run_train(mut job: TrainJob, out: &Path) -> Result<(), Failure> {
    let weights = read_classifier_weights(&job.class_weights)?;
    let set = read_embedding_container(&job.embeddings)?;
    let labels = read_labels(&job.labels, &weights.class_names)?;
    let adapter = job.config.adapter_config(set.dim);
    adapter.validate()?;
    job.config.bottleneck = Some(adapter.bottleneck);

    let split = stratified_split(&labels, job.val_fraction, job.config.seed)?;
    let outcome = fit(&set, &labels, &weights, &split, &job.config)?;

    fs::create_dir_all(out)?;
    let meta = CheckpointMeta {
        epoch: outcome.best_epoch as u32,
        best_val_accuracy: outcome.best_val_accuracy,
    };
    save_checkpoint(&outcome.best_params, &meta, &out.join("checkpoint.mhc1"))?;
    fs::write(out.join("train.log"), outcome.log())?;

    let mut manifest = RunManifest::new(
        "train",
        Some(job.config.seed),
        serde_json::to_value(&job).expect("serializable"),
    );
    manifest.inputs.extend(container_digests("embeddings", &job.embeddings)?);
    manifest.inputs.push(digest("labels", &job.labels)?);
    manifest.inputs.extend(container_digests("class_weights", &job.class_weights)?);
    manifest.outputs = output_digests(out, &["checkpoint.mhc1", "train.log"])?;
    manifest.write(out)?;

    println!(
        "trained {} epochs; best epoch {} with validation accuracy {:.2}",
        outcome.history.len(),
        outcome.best_epoch,
        outcome.best_val_accuracy * 100.0
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub(super) fn eval(a: EvalArgs) -> Result<(), Failure> {
    if let Some(alpha) = a.alpha_override {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(usage(format!("--alpha-override must be in [0, 1], got {alpha}")));
        }
    }
    let job = EvalJob {
        checkpoint: a.checkpoint,
        embeddings: a.embeddings,
        labels: a.labels,
        class_weights: a.class_weights,
        alpha_override: a.alpha_override,
        cosine: !a.raw_dot,
    };
    run_eval(job, &a.out)
}

pub(super) fn run_eval(job: EvalJob, out: &Path) -> Result<(), Failure> {
    let weights = read_classifier_weights(&job.class_weights)?;
    let set = read_embedding_container(&job.embeddings)?;
    let labels = read_labels(&job.labels, &weights.class_names)?;
    let (mut params, _) = load_checkpoint(&job.checkpoint)?;
    if let Some(alpha) = job.alpha_override {
        params.config.alpha = alpha;
    }
    for (what, d) in [("class weights", weights.dim()), ("embeddings", set.dim)] {
        if d != params.config.dim {
            return Err(Failure::Data(format!(
                "checkpoint has width {}, {what} have width {d}",
                params.config.dim
            )));
        }
    }
    let head = ClassifierHead::new(&weights, job.cosine)?;
    let report = evaluate(&params, &head, &set, &labels, &weights.class_names)?;

    fs::create_dir_all(out)?;
    report.write_files(out)?;
    let mut manifest = RunManifest::new("eval", None, serde_json::to_value(&job).expect("serializable"));
    manifest.inputs.push(digest("checkpoint", &job.checkpoint)?);
    manifest.inputs.extend(container_digests("embeddings", &job.embeddings)?);
    manifest.inputs.push(digest("labels", &job.labels)?);
    manifest.inputs.extend(container_digests("class_weights", &job.class_weights)?);
    manifest.outputs = output_digests(out, &["metrics.json", "confusion.csv", "per_class.csv"])?;
    manifest.write(out)?;

    let pct = |v: f64| format!("{:.2}", v * 100.0);
    println!("samples                      {}", report.n_samples);
    println!("accuracy                     {}", pct(report.accuracy));
    println!("macro_f1                     {}", pct(report.macro_f1));
    println!("weighted_f1                  {}", pct(report.weighted_f1));
    println!(
        "adjusted_balanced_accuracy   {}",
        report.adjusted_balanced_accuracy.map_or("n/a".into(), pct)
    );
    Ok(())
}

pub(super) fn replay(a: ReplayArgs) -> Result<(), Failure> {
    let manifest = RunManifest::read(&a.manifest)?;
    manifest.verify_inputs()?;
    let bad = |e: serde_json::Error| Failure::Data(format!("manifest settings: {e}"));
    match manifest.command.as_str() {
        "train" => run_train(serde_json::from_value(manifest.settings).map_err(bad)?, &a.out),
        "eval" => run_eval(serde_json::from_value(manifest.settings).map_err(bad)?, &a.out),
        other => Err(Failure::Data(format!("cannot replay a {other:?} manifest"))),
    }
}
