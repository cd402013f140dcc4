//! Browser demo: learning-rate schedule, metrics from a confusion matrix,
//! and a small train-then-inspect-attention run on a synthetic region task.

use mhadapter_core::adapter::{adapter_features, attention_salience, ClassifierHead, Mode};
use mhadapter_core::dataio::SplitAssignment;
use mhadapter_core::metrics::{ConfusionMatrix, EvalReport};
use mhadapter_core::rng::{stream, Stream};
use mhadapter_core::synthetic::{separable_task, SyntheticSpec};
use mhadapter_core::training::{inverse_frequency_weights, lr_at_epoch, TrainConfig, Trainer};
use wasm_bindgen::prelude::*;

pub const GRID: usize = 4;

pub fn schedule(peak_lr: f64, warmup_start_lr: f64, warmup_epochs: usize, max_epochs: usize) -> Result<Vec<f64>, String> {
    let config = TrainConfig {
        peak_lr,
        warmup_start_lr,
        warmup_epochs,
        max_epochs,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok((0..max_epochs).map(|e| lr_at_epoch(e, &config)).collect())
}

pub fn report_json(counts: &[u32], k: usize) -> Result<String, String> {
    if k == 0 || counts.len() != k * k {
        return Err(format!("expected {k}x{k} counts, got {}", counts.len()));
    }
    let rows = counts.chunks(k).map(|r| r.iter().map(|&c| c as u64).collect()).collect();
    let names = (0..k).map(|c| format!("class {c}")).collect();
    let cm = ConfusionMatrix::from_counts(rows, names).map_err(|e| e.to_string())?;
    let report = EvalReport::from_confusion(cm).map_err(|e| e.to_string())?;
    let mut json = report.metrics_json();
    json["per_class"] = serde_json::to_value(&report.per_class).map_err(|e| e.to_string())?;
    Ok(json.to_string())
}

/// Outcome of training on the region task.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct RegionRun {
    salience: Vec<f32>,
    losses: Vec<f64>,
    accuracies: Vec<f64>,
    zero_shot_accuracy: f64,
}

#[wasm_bindgen]
impl RegionRun {
    /// Mean attention received by each cell of the 4x4 patch grid, row-major.
    #[wasm_bindgen(getter)]
    pub fn salience(&self) -> Vec<f32> {
        self.salience.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn losses(&self) -> Vec<f64> {
        self.losses.clone()
    }

    /// Training accuracy after each epoch.
    #[wasm_bindgen(getter)]
    pub fn accuracies(&self) -> Vec<f64> {
        self.accuracies.clone()
    }

    #[wasm_bindgen(getter, js_name = zeroShotAccuracy)]
    pub fn zero_shot_accuracy(&self) -> f64 {
        self.zero_shot_accuracy
    }
}

/// Class signal is planted only in `signal_cells` of a 4x4 patch grid; the
/// adapter is trained and its averaged attention map returned.
pub fn region_run(signal_cells: &[u32], heads: usize, alpha: f64, epochs: usize, seed: u64) -> Result<RegionRun, String> {
    let cells: Vec<usize> = signal_cells.iter().map(|&c| c as usize).collect();
    if cells.is_empty() || cells.iter().any(|&c| c >= GRID * GRID) {
        return Err(format!("signal cells must be a non-empty subset of 0..{}", GRID * GRID));
    }
    if !(0.0..=1.0).contains(&alpha) || epochs == 0 {
        return Err("alpha must be in [0, 1] and epochs at least 1".into());
    }
    let task = separable_task(&SyntheticSpec {
        dim: 16,
        n_patches: GRID * GRID,
        samples: 160,
        views: 2,
        signal_patches: Some(cells.clone()),
        seed,
        ..SyntheticSpec::default()
    });
    let split = SplitAssignment {
        train_ids: task.embeddings.image_ids.clone(),
        val_ids: vec![],
        seed,
    };
    let config = TrainConfig {
        heads,
        alpha,
        max_epochs: epochs.max(2),
        warmup_epochs: 1.min(epochs.max(2) - 1),
        batch_size: 32,
        peak_lr: 5e-3,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&task.embeddings, &task.labels, &task.weights, &split, config)
        .map_err(|e| e.to_string())?;
    let head = ClassifierHead::new(&task.weights, true).map_err(|e| e.to_string())?;
    let zero_shot_accuracy = task
        .classes
        .iter()
        .enumerate()
        .filter(|&(i, &c)| {
            let f0 = task.embeddings.view(i, 0).row(0).to_owned();
            mhadapter_core::adapter::argmax(head.classify(f0.view()).unwrap().probabilities.view()) == c
        })
        .count() as f64
        / task.classes.len() as f64;

    let (mut losses, mut accuracies) = (Vec::new(), Vec::new());
    for epoch in 0..epochs {
        let lr = lr_at_epoch(epoch, trainer.config());
        losses.push(trainer.run_epoch(lr).map_err(|e| e.to_string())?);
        accuracies.push(trainer.train_accuracy().map_err(|e| e.to_string())?);
    }
    let mut salience = vec![0.0f32; GRID * GRID];
    let mut rng = stream(seed, Stream::Aux(9));
    for i in 0..task.embeddings.n_images() {
        let trace = adapter_features(task.embeddings.view(i, 0), &trainer.state.params, Mode::Eval, &mut rng)
            .map_err(|e| e.to_string())?;
        for (s, v) in salience.iter_mut().zip(attention_salience(&trace)) {
            *s += v / task.embeddings.n_images() as f32;
        }
    }
    Ok(RegionRun {
        salience,
        losses,
        accuracies,
        zero_shot_accuracy,
    })
}

/// Learning rate for each epoch of a warmup + cosine schedule.
#[wasm_bindgen(js_name = lrSchedule)]
pub fn lr_schedule(peak_lr: f64, warmup_start_lr: f64, warmup_epochs: u32, max_epochs: u32) -> Result<Vec<f64>, JsError> {
    schedule(peak_lr, warmup_start_lr, warmup_epochs as usize, max_epochs as usize).map_err(|e| JsError::new(&e))
}

/// Accuracy, macro/weighted F1, ABA and per-class stats as JSON, from
/// row-major `k x k` counts (rows = true class).
#[wasm_bindgen(js_name = metricsFromConfusion)]
pub fn metrics_from_confusion(counts: &[u32], k: usize) -> Result<String, JsError> {
    report_json(counts, k).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = inverseWeights)]
pub fn inverse_weights(class_counts: &[u32]) -> Result<Vec<f64>, JsError> {
    let counts: Vec<usize> = class_counts.iter().map(|&c| c as usize).collect();
    inverse_frequency_weights(&counts)
        .map(|w| w.weights)
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = trainRegionTask)]
pub fn train_region_task(signal_cells: &[u32], heads: usize, alpha: f64, epochs: u32, seed: u32) -> Result<RegionRun, JsError> {
    region_run(signal_cells, heads, alpha, epochs as usize, seed as u64).map_err(|e| JsError::new(&e))
}
