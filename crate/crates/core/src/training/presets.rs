use serde::Serialize;

use super::{TrainError, Weighting};

/// Per-attribute best settings found by grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preset {
    pub attribute: &'static str,
    pub weighting: Weighting,
    pub alpha: f64,
    pub heads: usize,
}

const fn preset(attribute: &'static str, weighting: Weighting, alpha: f64, heads: usize) -> Preset {
    Preset {
        attribute,
        weighting,
        alpha,
        heads,
    }
}

pub const PRESETS: [Preset; 8] = [
    preset("platform", Weighting::Uniform, 0.8, 4),
    preset("weather", Weighting::Uniform, 0.2, 8),
    preset("view_direction", Weighting::Inverse, 0.8, 4),
    preset("lighting_condition", Weighting::Inverse, 0.8, 8),
    preset("panoramic_status", Weighting::Uniform, 0.2, 4),
    preset("quality", Weighting::Inverse, 0.2, 16),
    preset("glare", Weighting::Uniform, 0.8, 4),
    preset("reflection", Weighting::Inverse, 0.8, 8),
];

/// Looks up an attribute preset. Case, spaces and hyphens are ignored, so
/// "View Direction" and "view-direction" both resolve.
pub fn load_preset(attribute: &str) -> Result<Preset, TrainError> {
    let key: String = attribute
        .trim()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect();
    PRESETS
        .iter()
        .find(|p| p.attribute == key)
        .copied()
        .ok_or_else(|| TrainError::UnknownAttribute(attribute.to_owned()))
}
