//! Finite-difference verification of the hand-written adapter gradients.
//!
//! The objective is the cross-entropy of a fixed target class. Every entry of
//! every trainable tensor is perturbed by ±h and ±2h in double precision and
//! the fourth-order central difference
//! `(8(L(+h) - L(-h)) - (L(+2h) - L(-2h))) / 12h` is compared with the
//! analytic gradient. Relative error
//! is `|a - n| / max(|a|, |n|, DENOM_FLOOR)`; the floor keeps entries whose
//! true gradient is ~0 from being judged on round-off alone. Entries whose
//! perturbation moves a ReLU pre-activation across zero are skipped, since the
//! loss is not differentiable there.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::adapter::{adapter_backward, adapter_forward, AdapterConfig, AdapterError, AdapterParams, ClassifierHead, Mode};
use crate::dataio::ClassifierWeights;
use crate::rng::{stream, Stream};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckCase {
    pub n_patches: usize,
    pub dim: usize,
    pub heads: usize,
    pub bottleneck: usize,
    pub use_bias: bool,
    pub cosine: bool,
    pub alpha: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl GradcheckCase {
    fn draw<R: Rng>(rng: &mut R, dims: Option<(usize, usize, usize, usize)>) -> Self {
        let pick = |rng: &mut R, xs: &[usize]| xs[rng.random_range(0..xs.len())];
        let (n_patches, dim, heads, bottleneck) = match dims {
            Some(d) => d,
            None => (
                pick(rng, &[1, 3, 9]),
                pick(rng, &[8, 16]),
                pick(rng, &[1, 2, 4]),
                pick(rng, &[2, 4]),
            ),
        };
        Self {
            n_patches,
            dim,
            heads,
            bottleneck,
            use_bias: rng.random(),
            cosine: rng.random(),
            alpha: rng.random_range(0.2..1.0),
            temperature: rng.random_range(0.2..1.0),
            seed: rng.random(),
        }
    }
}

impl std::fmt::Display for GradcheckCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "N={} D={} H={} d_b={} bias={} cosine={}",
            self.n_patches, self.dim, self.heads, self.bottleneck, self.use_bias, self.cosine
        )
    }
}

/// `count` random configurations; `dims` pins (N, D, H, d_b).
pub fn random_cases(count: usize, seed: u64, dims: Option<(usize, usize, usize, usize)>) -> Vec<GradcheckCase> {
    let mut rng = stream(seed, Stream::Aux(200));
    (0..count).map(|_| GradcheckCase::draw(&mut rng, dims)).collect()
}

/// Deliberate corruption of one analytic gradient, to show the harness
/// notices broken rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub tensor: String,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub case: GradcheckCase,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn worst(&self) -> &TensorCheck {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("at least one tensor")
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.worst().max_rel_error < tolerance
    }
}

struct Fixture {
    params: AdapterParams<f64>,
    head: ClassifierHead<f64>,
    tokens: Array2<f64>,
    target: usize,
}

fn fixture(case: &GradcheckCase) -> Result<Fixture, AdapterError> {
    let mut rng = stream(case.seed, Stream::Aux(201));
    let config = AdapterConfig {
        dim: case.dim,
        bottleneck: case.bottleneck,
        heads: case.heads,
        alpha: case.alpha,
        dropout_p: 0.0,
        ln_eps: 1e-5,
        use_bias: case.use_bias,
    };
    let mut params = AdapterParams::<f64>::init(config, &mut rng)?;
    let t = &mut params.tensors;
    t.gamma.mapv_inplace(|_| 1.0 + rng.random_range(-0.3..0.3));
    t.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    for b in [&mut t.b_v1, &mut t.b_v2, &mut t.b_q, &mut t.b_k, &mut t.b_v, &mut t.b_o]
        .into_iter()
        .flatten()
    {
        b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let k = 3;
    let rows = Array2::from_shape_simple_fn((k, case.dim), || rng.random_range(-1.0f32..1.0));
    let names = (0..k).map(|c| format!("c{c}")).collect();
    let weights = ClassifierWeights::new(names, rows, case.temperature as f32, "")
        .map_err(|e| AdapterError::InvalidConfig(e.to_string()))?;
    let head = ClassifierHead::new(&weights, case.cosine)?;
    let tokens = Array2::from_shape_simple_fn((case.n_patches + 1, case.dim), || rng.random_range(-1.0..1.0));
    let target = rng.random_range(0..k);
    Ok(Fixture {
        params,
        head,
        tokens,
        target,
    })
}

/// Loss and the ReLU gate pattern for the current parameters.
fn evaluate(fx: &Fixture, params: &AdapterParams<f64>) -> Result<(f64, Vec<bool>), AdapterError> {
    let mut rng = stream(0, Stream::Dropout);
    let trace = adapter_forward(fx.tokens.view(), params, &fx.head, Mode::Eval, &mut rng)?;
    let loss = -trace.probabilities()[fx.target].ln();
    let gates = trace.features.mlp_hidden.iter().map(|&h| h > 0.0).collect();
    Ok((loss, gates))
}

pub fn check_case(case: &GradcheckCase, step: f64, fault: Option<&Fault>) -> Result<GradcheckReport, AdapterError> {
    let fx = fixture(case)?;
    let mut rng = stream(0, Stream::Dropout);
    let trace = adapter_forward(fx.tokens.view(), &fx.params, &fx.head, Mode::Eval, &mut rng)?;
    let mut d_logits: Array1<f64> = trace.probabilities().clone();
    d_logits[fx.target] -= 1.0;
    let analytic = adapter_backward(&trace, d_logits.view(), &fx.params, &fx.head)?;
    let (_, base_gates) = evaluate(&fx, &fx.params)?;

    let mut probe = fx.params.clone();
    let mut tensors = Vec::new();
    for (ti, (name, grad)) in analytic.named().into_iter().enumerate() {
        let factor = match fault {
            Some(f) if f.tensor == name => f.factor,
            _ => 1.0,
        };
        let mut report = TensorCheck {
            name,
            max_rel_error: 0.0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            skipped: 0,
        };
        for (flat, &g) in grad.iter().enumerate() {
            let a = g * factor;
            let original = probe.tensors.named()[ti].1.iter().nth(flat).copied().unwrap();
            let set = |probe: &mut AdapterParams<f64>, v: f64| {
                *probe.tensors.named_mut().swap_remove(ti).1.iter_mut().nth(flat).unwrap() = v;
            };
            let mut losses = [0.0; 4];
            let mut kink = false;
            for (slot, offset) in losses.iter_mut().zip([step, -step, 2.0 * step, -2.0 * step]) {
                set(&mut probe, original + offset);
                let (loss, gates) = evaluate(&fx, &probe)?;
                *slot = loss;
                kink |= gates != base_gates;
            }
            set(&mut probe, original);
            if kink {
                report.skipped += 1;
                continue;
            }
            let [up, down, up2, down2] = losses;
            let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        tensors.push(report);
    }
    Ok(GradcheckReport { case: *case, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_on_random_cases() {
        for case in random_cases(6, 1, None) {
            let r = check_case(&case, DEFAULT_STEP, None).unwrap();
            let w = r.worst();
            assert!(r.passed(DEFAULT_TOLERANCE), "{case}: {} {}", w.name, w.max_rel_error);
            assert!(r.tensors.iter().all(|t| t.checked > 0 || t.skipped > 0));
        }
    }

    #[test]
    fn single_patch_passes() {
        for case in random_cases(3, 2, Some((1, 8, 2, 4))) {
            assert!(check_case(&case, DEFAULT_STEP, None).unwrap().passed(DEFAULT_TOLERANCE));
        }
    }

    #[test]
    fn detects_corrupted_rule() {
        let case = random_cases(1, 3, Some((3, 8, 2, 2)))[0];
        let fault = Fault {
            tensor: "w_q".into(),
            factor: 1.01,
        };
        let r = check_case(&case, DEFAULT_STEP, Some(&fault)).unwrap();
        assert!(!r.passed(DEFAULT_TOLERANCE));
        assert_eq!(r.worst().name, "w_q");
    }
}
