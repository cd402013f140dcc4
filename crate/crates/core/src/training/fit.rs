use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use super::loss::sample_logit_grad;
use super::{adamw_step, lr_at_epoch, weighted_cross_entropy, AdamState, ClassWeightVector, TrainConfig, TrainError};
use crate::adapter::{adapter_backward, adapter_forward, predict, AdapterParams, AdapterTensors, ClassifierHead, Mode};
use crate::dataio::{ClassifierWeights, EmbeddingSet, LabelTable, SplitAssignment};
use crate::rng::{stream, RunRng, Stream};

/// Samples whose gradients are held in memory at once before being folded
/// into the batch sum.
const WAVE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub best: bool,
}

impl EpochRecord {
    pub const LOG_HEADER: &'static str = "epoch,lr,train_loss,val_accuracy,best";

    pub fn log_line(&self) -> String {
        format!(
            "{},{:e},{:e},{},{}",
            self.epoch, self.lr, self.train_loss, self.val_accuracy, self.best as u8
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: AdapterParams<f32>,
    pub adam: AdamState<f32>,
    /// Epochs completed so far.
    pub epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_params: AdapterParams<f32>,
    pub epochs_since_improvement: usize,
    pub history: Vec<EpochRecord>,
    shuffle_rng: RunRng,
    dropout_rng: RunRng,
}

impl TrainState {
    pub fn new(params: AdapterParams<f32>, seed: u64) -> Self {
        Self {
            adam: AdamState::new(&params.config),
            best_params: params.clone(),
            params,
            epoch: 0,
            best_val_accuracy: None,
            best_epoch: None,
            epochs_since_improvement: 0,
            history: Vec::new(),
            shuffle_rng: stream(seed, Stream::Shuffle),
            dropout_rng: stream(seed, Stream::Dropout),
        }
    }

    /// Closes an epoch. Only a strictly better accuracy replaces the kept
    /// parameters, so ties keep the earlier epoch.
    pub fn record(&mut self, lr: f64, train_loss: f64, val_accuracy: f64) -> &EpochRecord {
        let best = self.best_val_accuracy.is_none_or(|b| val_accuracy > b);
        if best {
            self.best_val_accuracy = Some(val_accuracy);
            self.best_epoch = Some(self.epoch);
            self.best_params = self.params.clone();
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        self.history.push(EpochRecord {
            epoch: self.epoch,
            lr,
            train_loss,
            val_accuracy,
            best,
        });
        self.epoch += 1;
        self.history.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best_params: AdapterParams<f32>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub final_params: AdapterParams<f32>,
    pub history: Vec<EpochRecord>,
    pub class_weights: ClassWeightVector,
    pub stopped_early: bool,
}

impl FitOutcome {
    pub fn log(&self) -> String {
        let mut s = String::from(EpochRecord::LOG_HEADER);
        s.push('\n');
        for r in &self.history {
            s.push_str(&r.log_line());
            s.push('\n');
        }
        s
    }
}

/// Epoch-level driver of a run. [`fit`] wraps it; tests use it to step
/// epochs by hand.
pub struct Trainer<'a> {
    config: TrainConfig,
    set: &'a EmbeddingSet,
    head: ClassifierHead<f32>,
    train: Vec<(usize, usize)>,
    val: Vec<(usize, usize)>,
    class_weights: ClassWeightVector,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(
        set: &'a EmbeddingSet,
        labels: &LabelTable,
        weights: &ClassifierWeights,
        split: &SplitAssignment,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if weights.dim() != set.dim {
            return Err(TrainError::ShapeMismatch(format!(
                "classifier width {} differs from embedding width {}",
                weights.dim(),
                set.dim
            )));
        }
        let k = weights.n_classes();
        labels.check_classes(k)?;
        let train = labels.subset(&split.train_ids)?.resolve(set)?;
        let val = labels.subset(&split.val_ids)?.resolve(set)?;
        if train.is_empty() {
            return Err(TrainError::EmptyTrainSet);
        }
        let mut counts = vec![0usize; k];
        for &(_, c) in &train {
            counts[c] += 1;
        }
        let class_weights = ClassWeightVector::for_mode(config.weighting, &counts)?;
        let head = ClassifierHead::new(weights, config.cosine)?;
        let adapter = config.adapter_config(set.dim);
        let params = AdapterParams::init(adapter, &mut stream(config.seed, Stream::Init))?;
        Ok(Self {
            state: TrainState::new(params, config.seed),
            config,
            set,
            head,
            train,
            val,
            class_weights,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn head(&self) -> &ClassifierHead<f32> {
        &self.head
    }

    pub fn class_weights(&self) -> &ClassWeightVector {
        &self.class_weights
    }

    /// (image index, class) pairs of the training partition.
    pub fn train_rows(&self) -> &[(usize, usize)] {
        &self.train
    }

    pub fn val_rows(&self) -> &[(usize, usize)] {
        &self.val
    }

    /// One pass over the shuffled training partition; returns the mean loss
    /// per sample.
    pub fn run_epoch(&mut self, lr: f64) -> Result<f64, TrainError> {
        let st = &mut self.state;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut st.shuffle_rng);
        let views: Vec<usize> = order
            .iter()
            .map(|_| st.shuffle_rng.random_range(0..self.set.n_views))
            .collect();
        let seeds: Vec<u64> = order.iter().map(|_| st.dropout_rng.random()).collect();

        let mut loss_sum = 0.0;
        for start in (0..order.len()).step_by(self.config.batch_size) {
            let end = (start + self.config.batch_size).min(order.len());
            let targets: Vec<usize> = order[start..end].iter().map(|&i| self.train[i].1).collect();
            let mut den = 0.0f32;
            for &t in &targets {
                den += self.class_weights.weights[t] as f32;
            }
            let params = &st.params;
            let one = |pos: usize| -> Result<(Array1<f32>, AdapterTensors<f32>), TrainError> {
                let (image, target) = self.train[order[pos]];
                let tokens = self.set.view(image, views[pos]);
                let mut rng = RunRng::seed_from_u64(seeds[pos]);
                let trace = adapter_forward(tokens, params, &self.head, Mode::Train, &mut rng)?;
                let scale = self.class_weights.weights[target] as f32 / den;
                let d_logits = sample_logit_grad(trace.probabilities().view(), target, scale);
                let grads = adapter_backward(&trace, d_logits.view(), params, &self.head)?;
                Ok((trace.output.probabilities, grads))
            };

            let mut probs = Array2::zeros((end - start, self.head.n_classes()));
            let mut grad_sum = AdapterTensors::zeros(&params.config);
            let positions: Vec<usize> = (start..end).collect();
            for wave in positions.chunks(WAVE) {
                #[cfg(feature = "parallel")]
                let results: Vec<_> = {
                    use rayon::prelude::*;
                    wave.par_iter().map(|&p| one(p)).collect()
                };
                #[cfg(not(feature = "parallel"))]
                let results: Vec<_> = wave.iter().map(|&p| one(p)).collect();
                for (&pos, r) in wave.iter().zip(results) {
                    let (p, g) = r?;
                    probs.row_mut(pos - start).assign(&p);
                    grad_sum.add_assign(&g);
                }
            }
            let (loss, _) = weighted_cross_entropy(probs.view(), &targets, &self.class_weights)?;
            adamw_step(&mut st.params.tensors, &mut st.adam, &grad_sum, lr, &self.config.adam)?;
            loss_sum += loss as f64 * targets.len() as f64;
        }
        Ok(loss_sum / order.len() as f64)
    }

    /// Accuracy on view 0 in eval mode with the current parameters.
    pub fn accuracy(&self, rows: &[(usize, usize)]) -> Result<f64, TrainError> {
        if rows.is_empty() {
            return Ok(0.0);
        }
        let images: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let predicted = predict(&self.state.params, &self.head, self.set, &images)?;
        let correct = predicted.iter().zip(rows).filter(|(p, r)| **p == r.1).count();
        Ok(correct as f64 / rows.len() as f64)
    }

    pub fn train_accuracy(&self) -> Result<f64, TrainError> {
        self.accuracy(&self.train)
    }

    /// Checkpoint-selection accuracy: the validation partition, or the
    /// training partition when no samples were held out.
    pub fn selection_accuracy(&self) -> Result<f64, TrainError> {
        if self.val.is_empty() {
            self.train_accuracy()
        } else {
            self.accuracy(&self.val)
        }
    }

    /// Trains one epoch at `lr`, validates and updates the kept checkpoint.
    pub fn step(&mut self, lr: f64) -> Result<EpochRecord, TrainError> {
        let loss = self.run_epoch(lr)?;
        let acc = self.selection_accuracy()?;
        Ok(self.state.record(lr, loss, acc).clone())
    }

    pub fn should_stop(&self) -> bool {
        self.state.epochs_since_improvement >= self.config.patience || self.state.epoch >= self.config.max_epochs
    }

    pub fn finish(self) -> FitOutcome {
        let st = self.state;
        FitOutcome {
            stopped_early: st.epoch < self.config.max_epochs,
            best_epoch: st.best_epoch.unwrap_or(0),
            best_val_accuracy: st.best_val_accuracy.unwrap_or(0.0),
            best_params: st.best_params,
            final_params: st.params,
            history: st.history,
            class_weights: self.class_weights,
        }
    }
}

pub fn fit(
    set: &EmbeddingSet,
    labels: &LabelTable,
    weights: &ClassifierWeights,
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<FitOutcome, TrainError> {
    fit_with_schedule(set, labels, weights, split, config, |e| lr_at_epoch(e, config))
}

/// [`fit`] with a caller-supplied learning rate per epoch.
pub fn fit_with_schedule(
    set: &EmbeddingSet,
    labels: &LabelTable,
    weights: &ClassifierWeights,
    split: &SplitAssignment,
    config: &TrainConfig,
    schedule: impl Fn(usize) -> f64,
) -> Result<FitOutcome, TrainError> {
    let mut trainer = Trainer::new(set, labels, weights, split, config.clone())?;
    while !trainer.should_stop() {
        let lr = schedule(trainer.state.epoch);
        trainer.step(lr)?;
    }
    Ok(trainer.finish())
}
