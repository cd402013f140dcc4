use ndarray::{Array1, Axis};

use super::FeatureTrace;
use crate::Real;

/// Attention received by each patch: the mean over heads and queries of
/// `A[h, i, j]`. Sums to 1 because every attention row does.
pub fn attention_salience<T: Real>(trace: &FeatureTrace<T>) -> Array1<T> {
    let a = &trace.attn.attention;
    let (heads, queries) = (a.len_of(Axis(0)), a.len_of(Axis(1)));
    let total = a.sum_axis(Axis(0)).sum_axis(Axis(0));
    let count = T::lit((heads * queries) as f64);
    total.mapv(|x| x / count)
}

/// Reshapes a salience vector into a square grid when `N` is a perfect
/// square (row-major patch order), otherwise `None`.
pub fn salience_grid<T: Real>(salience: &Array1<T>) -> Option<ndarray::Array2<T>> {
    let n = salience.len();
    let side = (n as f64).sqrt().round() as usize;
    (side * side == n).then(|| {
        salience
            .clone()
            .into_shape_with_order((side, side))
            .expect("perfect square")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{adapter_features, AdapterConfig, AdapterParams, Mode};
    use crate::rng::{stream, Stream};
    use ndarray::Array2;
    use rand::Rng;

    fn trace(n: usize, seed: u64) -> FeatureTrace<f64> {
        let cfg = AdapterConfig {
            heads: 4,
            ..AdapterConfig::for_dim(8)
        };
        let mut rng = stream(seed, Stream::Aux(3));
        let p = AdapterParams::init(cfg, &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((n + 1, 8), || rng.random_range(-2.0..2.0));
        adapter_features(x.view(), &p, Mode::Eval, &mut rng).unwrap()
    }

    #[test]
    fn single_patch_gets_everything() {
        assert_eq!(attention_salience(&trace(1, 0)).to_vec(), vec![1.0]);
    }

    #[test]
    fn uniform_attention_is_flat() {
        let mut t = trace(9, 1);
        t.attn.attention.fill(1.0 / 9.0);
        let s = attention_salience(&t);
        assert!(s.iter().all(|&x| (x - 1.0 / 9.0).abs() < 1e-15));
        assert_eq!(salience_grid(&s).unwrap().dim(), (3, 3));
    }

    #[test]
    fn matches_triple_loop() {
        let t = trace(6, 2);
        let a = &t.attn.attention;
        let s = attention_salience(&t);
        for j in 0..6 {
            let mut acc = 0.0;
            for h in 0..4 {
                for i in 0..6 {
                    acc += a[[h, i, j]];
                }
            }
            assert!((s[j] - acc / 24.0).abs() < 1e-9);
        }
        assert!((s.sum() - 1.0).abs() < 1e-6);
        assert!(salience_grid(&s).is_none());
    }
}
