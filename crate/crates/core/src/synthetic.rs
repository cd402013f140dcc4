//! Constructed datasets with a known answer, for tests, demos and fixtures.
//!
//! Each class has a random mean direction that is added to the patch tokens
//! of its images. The class token is pure noise, so the zero-shot path sits
//! near chance and the adapter has to learn the patch signal.

use ndarray::Array2;
use rand::Rng;

use crate::dataio::{ClassifierWeights, EmbeddingSet, LabelTable};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_patches: usize,
    pub samples: usize,
    pub views: usize,
    /// Scale of the class mean added to signal patches.
    pub signal: f32,
    /// Half-width of the uniform noise on every token.
    pub noise: f32,
    /// Patch positions (0-based) that carry the class signal; `None` = all.
    pub signal_patches: Option<Vec<usize>>,
    /// Samples per class; `None` = round-robin over classes.
    pub class_sizes: Option<Vec<usize>>,
    pub temperature: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 32,
            n_patches: 9,
            samples: 200,
            views: 2,
            signal: 1.0,
            noise: 0.5,
            signal_patches: None,
            class_sizes: None,
            temperature: 0.01,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub embeddings: EmbeddingSet,
    pub labels: LabelTable,
    pub weights: ClassifierWeights,
    /// Class of each image, in container order.
    pub classes: Vec<usize>,
}

pub fn separable_task(spec: &SyntheticSpec) -> SyntheticTask {
    let mut rng = stream(spec.seed, Stream::Aux(100));
    let (k, d) = (spec.classes, spec.dim);
    let mut unit = |rows: usize| {
        let mut m = Array2::from_shape_simple_fn((rows, d), || rng.random_range(-1.0f32..1.0));
        for mut r in m.rows_mut() {
            let n = r.dot(&r).sqrt();
            r.mapv_inplace(|x| x / n);
        }
        m
    };
    let means = unit(k);
    let text = unit(k);

    let classes: Vec<usize> = match &spec.class_sizes {
        Some(sizes) => sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect(),
        None => (0..spec.samples).map(|i| i % k).collect(),
    };
    let n_tokens = spec.n_patches + 1;
    let carries = |p: usize| spec.signal_patches.as_ref().is_none_or(|s| s.contains(&p));
    let scale = (d as f32).sqrt();
    let mut data = Vec::with_capacity(classes.len() * spec.views * n_tokens * d);
    for &c in &classes {
        for _ in 0..spec.views {
            for tok in 0..n_tokens {
                let signal = tok > 0 && carries(tok - 1);
                for j in 0..d {
                    let mut x = spec.noise * rng.random_range(-1.0f32..1.0);
                    if signal {
                        x += spec.signal * scale * means[[c, j]];
                    }
                    data.push(x);
                }
            }
        }
    }
    let ids: Vec<String> = (0..classes.len()).map(|i| format!("img{i:04}")).collect();
    let embeddings = EmbeddingSet::new(ids.clone(), spec.views, n_tokens, d, data).expect("valid synthetic set");
    let labels = LabelTable::from_pairs(ids.into_iter().zip(classes.iter().copied())).expect("unique ids");
    let names = (0..k).map(|c| format!("class{c}")).collect();
    let weights =
        ClassifierWeights::new(names, text, spec.temperature, "a photo of {CLASS}").expect("valid synthetic weights");
    SyntheticTask {
        embeddings,
        labels,
        weights,
        classes,
    }
}
