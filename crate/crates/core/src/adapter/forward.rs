use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use super::ops::{dropout, layer_norm, mean_pool, mhsa, mlp_parts, residual_blend};
use super::{AdapterError, AdapterParams, Classification, ClassifierHead, LayerNormOutput, MhsaOutput, Mode, Result};
use crate::Real;

/// Intermediates of the adapter up to the blended feature `f*`.
#[derive(Debug, Clone)]
pub struct FeatureTrace<T> {
    pub mode: Mode,
    /// Patch tokens `f_1..f_N`.
    pub patches: Array2<T>,
    /// Class token `f_0`.
    pub global: Array1<T>,
    /// MLP pre-activation, kept for the ReLU gate.
    pub mlp_hidden: Array2<T>,
    pub x_av: Array2<T>,
    pub ln: LayerNormOutput<T>,
    pub attn: MhsaOutput<T>,
    pub dropout_mask: Array2<T>,
    pub dropout_scale: T,
    pub x_drop: Array2<T>,
    pub x_mean: Array1<T>,
    pub blended: Array1<T>,
}

/// Full forward pass: features plus classification of `f*`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub features: FeatureTrace<T>,
    pub output: Classification<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn probabilities(&self) -> &Array1<T> {
        &self.output.probabilities
    }

    pub fn logits(&self) -> &Array1<T> {
        &self.output.logits
    }
}

/// Runs the adapter on one view (`N + 1` tokens, class token first) and
/// returns every intermediate up to the blended feature.
pub fn adapter_features<T: Real, R: Rng + ?Sized>(
    view_tokens: ArrayView2<'_, T>,
    params: &AdapterParams<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<FeatureTrace<T>> {
    let cfg = &params.config;
    let t = &params.tensors;
    if view_tokens.nrows() < 2 {
        return Err(AdapterError::ShapeMismatch(format!(
            "need a class token and at least one patch, got {} tokens",
            view_tokens.nrows()
        )));
    }
    if view_tokens.ncols() != cfg.dim {
        return Err(AdapterError::ShapeMismatch(format!(
            "tokens have width {}, adapter expects {}",
            view_tokens.ncols(),
            cfg.dim
        )));
    }
    let global = view_tokens.row(0).to_owned();
    let patches = view_tokens.slice(s![1.., ..]).to_owned();

    let (mlp_hidden, x_av) = mlp_parts(patches.view(), t)?;
    let ln = layer_norm(x_av.view(), t.gamma.view(), t.beta.view(), T::lit(cfg.ln_eps))?;
    let attn = mhsa(ln.output.view(), t, cfg.heads)?;
    let (x_drop, dropout_mask) = dropout(attn.output.view(), cfg.dropout_p, mode, rng);
    let dropout_scale = if mode == Mode::Train && cfg.dropout_p > 0.0 {
        T::lit(1.0 / (1.0 - cfg.dropout_p))
    } else {
        T::one()
    };
    let x_mean = mean_pool(x_drop.view());
    let blended = residual_blend(x_mean.view(), global.view(), T::lit(cfg.alpha))?;
    Ok(FeatureTrace {
        mode,
        patches,
        global,
        mlp_hidden,
        x_av,
        ln,
        attn,
        dropout_mask,
        dropout_scale,
        x_drop,
        x_mean,
        blended,
    })
}

/// Adapter followed by temperature-scaled classification of `f*`.
pub fn adapter_forward<T: Real, R: Rng + ?Sized>(
    view_tokens: ArrayView2<'_, T>,
    params: &AdapterParams<T>,
    head: &ClassifierHead<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardTrace<T>> {
    if head.dim() != params.config.dim {
        return Err(AdapterError::ShapeMismatch(format!(
            "classifier rows have width {}, adapter dim is {}",
            head.dim(),
            params.config.dim
        )));
    }
    let features = adapter_features(view_tokens, params, mode, rng)?;
    let output = head.classify(features.blended.view())?;
    Ok(ForwardTrace { features, output })
}
