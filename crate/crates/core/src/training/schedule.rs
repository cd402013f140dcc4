use std::f64::consts::PI;

use super::TrainConfig;

/// Learning rate for a whole epoch: linear warmup then cosine decay to 0.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> f64 {
    lr_at(epoch as f64, config)
}

/// Same schedule evaluated at a fractional epoch.
pub fn lr_at(epoch: f64, config: &TrainConfig) -> f64 {
    let warmup = config.warmup_epochs as f64;
    let total = config.max_epochs as f64;
    if epoch < warmup {
        config.warmup_start_lr + (config.peak_lr - config.warmup_start_lr) * epoch / warmup
    } else {
        let progress = (epoch - warmup) / (total - warmup);
        config.peak_lr * (1.0 + (PI * progress).cos()) / 2.0
    }
}
