use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;

use super::{DataError, LabelTable, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub seed: u64,
}

/// Validation count for a class of `n` samples: round-half-up of
/// `fraction * n`, leaving at least one sample in train.
fn val_count(n: usize, fraction: f64) -> usize {
    let want = (fraction * n as f64 + 0.5).floor() as usize;
    want.min(n.saturating_sub(1))
}

/// Per-class holdout of `val_fraction` of the labeled ids.
///
/// Both output lists keep the label table's order.
pub fn stratified_split(labels: &LabelTable, val_fraction: f64, seed: u64) -> Result<SplitAssignment> {
    if labels.is_empty() {
        return Err(DataError::EmptyInput);
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(DataError::Invalid(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (id, c) in labels.iter() {
        by_class.entry(c).or_default().push(id);
    }
    let mut rng = stream(seed, Stream::Split);
    let mut held_out = HashSet::new();
    for ids in by_class.values_mut() {
        ids.shuffle(&mut rng);
        held_out.extend(ids.iter().take(val_count(ids.len(), val_fraction)).copied());
    }
    let (val_ids, train_ids) = labels
        .iter()
        .map(|(id, _)| id)
        .partition::<Vec<_>, _>(|id| held_out.contains(id));
    Ok(SplitAssignment {
        train_ids: train_ids.into_iter().map(str::to_owned).collect(),
        val_ids: val_ids.into_iter().map(str::to_owned).collect(),
        seed,
    })
}
