use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AdapterError, Result};
use crate::Real;

/// Structural hyperparameters of the adapter head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Token feature width D (shared by class and patch tokens).
    pub dim: usize,
    /// Bottleneck width of the MLP.
    pub bottleneck: usize,
    pub heads: usize,
    /// Residual blend ratio; 0 recovers the frozen zero-shot feature.
    pub alpha: f64,
    pub dropout_p: f64,
    pub ln_eps: f64,
    pub use_bias: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self::for_dim(512)
    }
}

impl AdapterConfig {
    /// Defaults for a given token width: bottleneck D/4, 4 heads, no biases.
    pub fn for_dim(dim: usize) -> Self {
        Self {
            dim,
            bottleneck: (dim / 4).max(1),
            heads: 4,
            alpha: 0.8,
            dropout_p: 0.1,
            ln_eps: 1e-5,
            use_bias: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AdapterError::InvalidConfig(msg));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.bottleneck == 0 {
            return bad("bottleneck width must be at least 1".into());
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout_p));
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("layer-norm epsilon must be positive, got {}", self.ln_eps));
        }
        Ok(())
    }

    pub fn trainable_params(&self) -> u64 {
        let (d, b) = (self.dim as u64, self.bottleneck as u64);
        let mlp = 2 * d * b;
        let norm = 2 * d;
        let attention = 4 * d * d;
        let biases = if self.use_bias { b + d + 4 * d } else { 0 };
        mlp + norm + attention + biases
    }
}

/// Closed-form count of every trainable scalar in the adapter head.
///
/// The head count does not change the total: heads split D, they don't add
/// projections.
pub fn count_trainable_params(dim: usize, bottleneck: usize, heads: usize, use_bias: bool) -> Result<u64> {
    let cfg = AdapterConfig {
        dim,
        bottleneck,
        heads,
        use_bias,
        ..AdapterConfig::for_dim(dim.max(1))
    };
    cfg.validate()?;
    Ok(cfg.trainable_params())
}

/// Every trainable tensor of the head. Also used for gradients and optimizer
/// moments, which share the exact same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterTensors<T> {
    pub w_v1: Array2<T>,
    pub b_v1: Option<Array1<T>>,
    pub w_v2: Array2<T>,
    pub b_v2: Option<Array1<T>>,
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub w_q: Array2<T>,
    pub b_q: Option<Array1<T>>,
    pub w_k: Array2<T>,
    pub b_k: Option<Array1<T>>,
    pub w_v: Array2<T>,
    pub b_v: Option<Array1<T>>,
    pub w_o: Array2<T>,
    pub b_o: Option<Array1<T>>,
}

pub const TENSOR_NAMES: [&str; 14] = [
    "w_v1", "b_v1", "w_v2", "b_v2", "gamma", "beta", "w_q", "b_q", "w_k", "b_k", "w_v", "b_v",
    "w_o", "b_o",
];

impl<T: Real> AdapterTensors<T> {
    pub fn zeros(cfg: &AdapterConfig) -> Self {
        let (d, b) = (cfg.dim, cfg.bottleneck);
        let bias = |n: usize| cfg.use_bias.then(|| Array1::zeros(n));
        Self {
            w_v1: Array2::zeros((d, b)),
            b_v1: bias(b),
            w_v2: Array2::zeros((b, d)),
            b_v2: bias(d),
            gamma: Array1::zeros(d),
            beta: Array1::zeros(d),
            w_q: Array2::zeros((d, d)),
            b_q: bias(d),
            w_k: Array2::zeros((d, d)),
            b_k: bias(d),
            w_v: Array2::zeros((d, d)),
            b_v: bias(d),
            w_o: Array2::zeros((d, d)),
            b_o: bias(d),
        }
    }

    /// Present tensors in canonical order; absent biases are skipped.
    pub fn named(&self) -> Vec<(&'static str, ArrayViewD<'_, T>)> {
        let all: [Option<ArrayViewD<'_, T>>; 14] = [
            Some(self.w_v1.view().into_dyn()),
            self.b_v1.as_ref().map(|b| b.view().into_dyn()),
            Some(self.w_v2.view().into_dyn()),
            self.b_v2.as_ref().map(|b| b.view().into_dyn()),
            Some(self.gamma.view().into_dyn()),
            Some(self.beta.view().into_dyn()),
            Some(self.w_q.view().into_dyn()),
            self.b_q.as_ref().map(|b| b.view().into_dyn()),
            Some(self.w_k.view().into_dyn()),
            self.b_k.as_ref().map(|b| b.view().into_dyn()),
            Some(self.w_v.view().into_dyn()),
            self.b_v.as_ref().map(|b| b.view().into_dyn()),
            Some(self.w_o.view().into_dyn()),
            self.b_o.as_ref().map(|b| b.view().into_dyn()),
        ];
        TENSOR_NAMES
            .into_iter()
            .zip(all)
            .filter_map(|(n, t)| t.map(|t| (n, t)))
            .collect()
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, T>)> {
        let all: [Option<ArrayViewMutD<'_, T>>; 14] = [
            Some(self.w_v1.view_mut().into_dyn()),
            self.b_v1.as_mut().map(|b| b.view_mut().into_dyn()),
            Some(self.w_v2.view_mut().into_dyn()),
            self.b_v2.as_mut().map(|b| b.view_mut().into_dyn()),
            Some(self.gamma.view_mut().into_dyn()),
            Some(self.beta.view_mut().into_dyn()),
            Some(self.w_q.view_mut().into_dyn()),
            self.b_q.as_mut().map(|b| b.view_mut().into_dyn()),
            Some(self.w_k.view_mut().into_dyn()),
            self.b_k.as_mut().map(|b| b.view_mut().into_dyn()),
            Some(self.w_v.view_mut().into_dyn()),
            self.b_v.as_mut().map(|b| b.view_mut().into_dyn()),
            Some(self.w_o.view_mut().into_dyn()),
            self.b_o.as_mut().map(|b| b.view_mut().into_dyn()),
        ];
        TENSOR_NAMES
            .into_iter()
            .zip(all)
            .filter_map(|(n, t)| t.map(|t| (n, t)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape<U: Real>(&self, other: &AdapterTensors<U>) -> bool {
        let (a, b) = (self.named(), other.named());
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        for ((_, mut a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a += &b;
        }
    }

    pub fn max_abs(&self) -> T {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn cast<U: Real>(&self) -> AdapterTensors<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::lit(x.as_f64()));
        let c1 = |a: &Array1<T>| a.mapv(|x| U::lit(x.as_f64()));
        AdapterTensors {
            w_v1: c2(&self.w_v1),
            b_v1: self.b_v1.as_ref().map(c1),
            w_v2: c2(&self.w_v2),
            b_v2: self.b_v2.as_ref().map(c1),
            gamma: c1(&self.gamma),
            beta: c1(&self.beta),
            w_q: c2(&self.w_q),
            b_q: self.b_q.as_ref().map(c1),
            w_k: c2(&self.w_k),
            b_k: self.b_k.as_ref().map(c1),
            w_v: c2(&self.w_v),
            b_v: self.b_v.as_ref().map(c1),
            w_o: c2(&self.w_o),
            b_o: self.b_o.as_ref().map(c1),
        }
    }
}

/// Adapter head: structure plus trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams<T> {
    pub config: AdapterConfig,
    pub tensors: AdapterTensors<T>,
}

impl<T: Real> AdapterParams<T> {
    /// Uniform(±1/√fan_in) weights, unit gain, zero shift and biases.
    pub fn init<R: Rng + ?Sized>(config: AdapterConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut t = AdapterTensors::zeros(&config);
        let mut fill = |a: &mut Array2<T>| {
            let bound = 1.0 / (a.nrows() as f64).sqrt();
            a.mapv_inplace(|_| T::lit(rng.random_range(-bound..bound)));
        };
        fill(&mut t.w_v1);
        fill(&mut t.w_v2);
        fill(&mut t.w_q);
        fill(&mut t.w_k);
        fill(&mut t.w_v);
        fill(&mut t.w_o);
        t.gamma.fill(T::one());
        Ok(Self { config, tensors: t })
    }

    /// All-zero weights with unit layer-norm gain.
    pub fn zeroed(config: AdapterConfig) -> Result<Self> {
        config.validate()?;
        let mut tensors = AdapterTensors::zeros(&config);
        tensors.gamma.fill(T::one());
        Ok(Self { config, tensors })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let reference = AdapterTensors::<T>::zeros(&self.config);
        if !self.tensors.same_shape(&reference) {
            return Err(AdapterError::ShapeMismatch(
                "tensor shapes do not match the adapter configuration".into(),
            ));
        }
        if !self.tensors.is_finite() {
            return Err(AdapterError::NonFinite);
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> AdapterParams<U> {
        AdapterParams {
            config: self.config,
            tensors: self.tensors.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(count_trainable_params(512, 128, 4, true).unwrap(), 1_183_360);
        assert_eq!(count_trainable_params(512, 128, 4, false).unwrap(), 1_180_672);
        assert_eq!(count_trainable_params(512, 320, 4, false).unwrap(), 1_377_280);
        assert_eq!(count_trainable_params(512, 320, 16, false).unwrap(), 1_377_280);
        assert!(count_trainable_params(512, 0, 4, false).is_err());
        assert!(count_trainable_params(512, 128, 3, false).is_err());
    }

    #[test]
    fn count_matches_allocated_tensors() {
        for use_bias in [false, true] {
            let cfg = AdapterConfig {
                use_bias,
                ..AdapterConfig::for_dim(16)
            };
            let t = AdapterTensors::<f32>::zeros(&cfg);
            assert_eq!(t.len() as u64, cfg.trainable_params());
            assert_eq!(t.named().len(), if use_bias { 14 } else { 8 });
        }
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let cfg = AdapterConfig::for_dim(64);
        let p = AdapterParams::<f64>::init(cfg, &mut crate::rng::stream(1, crate::rng::Stream::Init)).unwrap();
        let bound = 1.0 / 8.0;
        assert!(p.tensors.w_q.iter().all(|x| x.abs() <= bound));
        assert!(p.tensors.w_v2.iter().all(|x| x.abs() <= 1.0 / 4.0));
        assert!(p.tensors.gamma.iter().all(|&g| g == 1.0));
        assert!(p.tensors.beta.iter().all(|&b| b == 0.0));
        p.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let ok = AdapterConfig::for_dim(8);
        ok.validate().unwrap();
        for bad in [
            AdapterConfig { heads: 3, ..ok },
            AdapterConfig { alpha: 1.5, ..ok },
            AdapterConfig { dropout_p: 1.0, ..ok },
            AdapterConfig { ln_eps: 0.0, ..ok },
            AdapterConfig { bottleneck: 0, ..ok },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
