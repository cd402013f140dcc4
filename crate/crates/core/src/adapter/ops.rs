//! Building blocks of the adapter forward pass.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use rand::Rng;

use super::{AdapterError, AdapterTensors, Result};
use crate::dataio::ClassifierWeights;
use crate::Real;

/// Cosine-mode norms below this are treated as zero vectors.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn check_width(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(AdapterError::ShapeMismatch(format!(
            "{what}: width {got}, expected {want}"
        )));
    }
    Ok(())
}

fn add_bias<T: Real>(x: &mut Array2<T>, bias: Option<&Array1<T>>) {
    if let Some(b) = bias {
        *x += b;
    }
}

/// Pre-activation and output of the bottleneck MLP.
pub(crate) fn mlp_parts<T: Real>(
    tokens: ArrayView2<'_, T>,
    t: &AdapterTensors<T>,
) -> Result<(Array2<T>, Array2<T>)> {
    check_width("bottleneck input", tokens.ncols(), t.w_v1.nrows())?;
    let mut hidden = tokens.dot(&t.w_v1);
    add_bias(&mut hidden, t.b_v1.as_ref());
    let activated = hidden.mapv(|x| x.max(T::zero()));
    let mut out = activated.dot(&t.w_v2);
    add_bias(&mut out, t.b_v2.as_ref());
    Ok((hidden, out))
}

/// `ReLU(X W1 + b1) W2 + b2`, applied to every token independently.
pub fn bottleneck_mlp<T: Real>(tokens: ArrayView2<'_, T>, t: &AdapterTensors<T>) -> Result<Array2<T>> {
    mlp_parts(tokens, t).map(|(_, out)| out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormOutput<T> {
    pub output: Array2<T>,
    pub mean: Array1<T>,
    /// Biased (divisor D) per-token variance.
    pub var: Array1<T>,
    pub normalized: Array2<T>,
    pub inv_std: Array1<T>,
}

/// Per-token layer normalization over the feature axis.
pub fn layer_norm<T: Real>(
    tokens: ArrayView2<'_, T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
    eps: T,
) -> Result<LayerNormOutput<T>> {
    let (n, d) = tokens.dim();
    check_width("layer_norm gamma", gamma.len(), d)?;
    check_width("layer_norm beta", beta.len(), d)?;
    let width = T::lit(d as f64);
    let mut mean = Array1::zeros(n);
    let mut var = Array1::zeros(n);
    let mut inv_std = Array1::zeros(n);
    let mut normalized = Array2::zeros((n, d));
    for (i, row) in tokens.outer_iter().enumerate() {
        let mu = row.iter().fold(T::zero(), |a, &x| a + x) / width;
        let v = row.iter().fold(T::zero(), |a, &x| a + (x - mu) * (x - mu)) / width;
        let r = T::one() / (v + eps).sqrt();
        normalized
            .row_mut(i)
            .zip_mut_with(&row, |z, &x| *z = (x - mu) * r);
        mean[i] = mu;
        var[i] = v;
        inv_std[i] = r;
    }
    let output = &normalized * &gamma + &beta;
    Ok(LayerNormOutput {
        output,
        mean,
        var,
        normalized,
        inv_std,
    })
}

/// Max-subtracted softmax, in place.
pub fn softmax_in_place<T: Real>(mut row: ArrayViewMut1<'_, T>) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    row.mapv_inplace(|x| {
        let e = (x - max).exp();
        sum += e;
        e
    });
    row.mapv_inplace(|e| e / sum);
}

pub fn softmax<T: Real>(logits: ArrayView1<'_, T>) -> Array1<T> {
    let mut p = logits.to_owned();
    softmax_in_place(p.view_mut());
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhsaOutput<T> {
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    /// Attention probabilities, `[heads, queries, keys]`.
    pub attention: Array3<T>,
    /// Concatenated head outputs before the output projection.
    pub concat: Array2<T>,
    pub output: Array2<T>,
}

/// Multi-head self-attention with shared Q/K/V input and an output projection.
pub fn mhsa<T: Real>(tokens_ln: ArrayView2<'_, T>, t: &AdapterTensors<T>, heads: usize) -> Result<MhsaOutput<T>> {
    let (n, d) = tokens_ln.dim();
    check_width("attention input", d, t.w_q.nrows())?;
    if heads == 0 || d % heads != 0 {
        return Err(AdapterError::ShapeMismatch(format!(
            "dim {d} not divisible by {heads} heads"
        )));
    }
    let dk = d / heads;
    let scale = T::one() / T::lit(dk as f64).sqrt();
    let project = |w: &Array2<T>, b: Option<&Array1<T>>| {
        let mut y = tokens_ln.dot(w);
        add_bias(&mut y, b);
        y
    };
    let q = project(&t.w_q, t.b_q.as_ref());
    let k = project(&t.w_k, t.b_k.as_ref());
    let v = project(&t.w_v, t.b_v.as_ref());

    let mut attention = Array3::zeros((heads, n, n));
    let mut concat = Array2::zeros((n, d));
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut a = attention.index_axis_mut(Axis(0), h);
        a.assign(&(q.slice(cols).dot(&k.slice(cols).t()) * scale));
        for row in a.outer_iter_mut() {
            softmax_in_place(row);
        }
        concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
    }
    let mut output = concat.dot(&t.w_o);
    add_bias(&mut output, t.b_o.as_ref());
    Ok(MhsaOutput {
        q,
        k,
        v,
        attention,
        concat,
        output,
    })
}

/// Inverted dropout. Returns the output and the 0/1 keep mask; survivors are
/// scaled by `1 / (1 - p)`. Eval mode (or `p = 0`) is the identity and draws
/// nothing from `rng`.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    tokens: ArrayView2<'_, T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> (Array2<T>, Array2<T>) {
    if mode == Mode::Eval || p == 0.0 {
        return (tokens.to_owned(), Array2::ones(tokens.dim()));
    }
    let keep = 1.0 - p;
    let mask = Array2::from_shape_simple_fn(tokens.dim(), || {
        if rng.random::<f64>() < keep {
            T::one()
        } else {
            T::zero()
        }
    });
    let scale = T::lit(1.0 / keep);
    let out = &tokens * &mask * scale;
    (out, mask)
}

/// Arithmetic mean over the token axis, accumulated token by token.
pub fn mean_pool<T: Real>(tokens: ArrayView2<'_, T>) -> Array1<T> {
    let mut acc = Array1::zeros(tokens.ncols());
    for row in tokens.outer_iter() {
        acc += &row;
    }
    let n = T::lit(tokens.nrows() as f64);
    acc.mapv_inplace(|x| x / n);
    acc
}

/// `alpha * adapted + (1 - alpha) * global`.
pub fn residual_blend<T: Real>(
    adapted: ArrayView1<'_, T>,
    global: ArrayView1<'_, T>,
    alpha: T,
) -> Result<Array1<T>> {
    check_width("blend", adapted.len(), global.len())?;
    let keep = T::one() - alpha;
    let mut out = Array1::zeros(adapted.len());
    ndarray::Zip::from(&mut out)
        .and(&adapted)
        .and(&global)
        .for_each(|o, &a, &g| *o = alpha * a + keep * g);
    Ok(out)
}

/// Frozen text classifier prepared for repeated use: rows pre-normalized in
/// cosine mode, cast to the working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub rows: Array2<T>,
    pub temperature: T,
    pub cosine: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification<T> {
    /// Feature actually dotted with the rows (unit-norm in cosine mode).
    pub feature: Array1<T>,
    /// Norm of the input feature (1 when cosine mode is off).
    pub feature_norm: T,
    pub logits: Array1<T>,
    pub probabilities: Array1<T>,
}

fn l2_norm<T: Real>(x: ArrayView1<'_, T>) -> T {
    x.iter().fold(T::zero(), |a, &v| a + v * v).sqrt()
}

impl<T: Real> ClassifierHead<T> {
    pub fn new(weights: &ClassifierWeights, cosine: bool) -> Result<Self> {
        let mut rows = weights.weights.mapv(T::from_f32);
        if cosine {
            for mut row in rows.outer_iter_mut() {
                let norm = l2_norm(row.view());
                if norm.as_f64() < MIN_NORM {
                    return Err(AdapterError::ZeroVectorInCosineMode);
                }
                row.mapv_inplace(|x| x / norm);
            }
        }
        Ok(Self {
            rows,
            temperature: T::from_f32(weights.temperature),
            cosine,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn classify(&self, f_star: ArrayView1<'_, T>) -> Result<Classification<T>> {
        check_width("classifier input", f_star.len(), self.dim())?;
        let (feature, feature_norm) = if self.cosine {
            let norm = l2_norm(f_star);
            if norm.as_f64() < MIN_NORM {
                return Err(AdapterError::ZeroVectorInCosineMode);
            }
            (f_star.mapv(|x| x / norm), norm)
        } else {
            (f_star.to_owned(), T::one())
        };
        let tau = self.temperature;
        let logits = self.rows.dot(&feature).mapv(|z| z / tau);
        let probabilities = softmax(logits.view());
        Ok(Classification {
            feature,
            feature_norm,
            logits,
            probabilities,
        })
    }

    /// Gradient on the pre-classifier feature given a gradient on the logits.
    pub fn backward(&self, out: &Classification<T>, d_logits: ArrayView1<'_, T>) -> Array1<T> {
        let tau = self.temperature;
        let d_feature = self.rows.t().dot(&d_logits).mapv(|x| x / tau);
        if !self.cosine {
            return d_feature;
        }
        let along = out.feature.dot(&d_feature);
        let r = out.feature_norm;
        ndarray::Zip::from(&d_feature)
            .and(&out.feature)
            .map_collect(|&g, &u| (g - u * along) / r)
    }
}

/// Temperature-scaled classification of one feature vector.
pub fn classify<T: Real>(
    f_star: ArrayView1<'_, T>,
    weights: &ClassifierWeights,
    cosine: bool,
) -> Result<(Array1<T>, Array1<T>)> {
    let c = ClassifierHead::new(weights, cosine)?.classify(f_star)?;
    Ok((c.logits, c.probabilities))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Real>(x: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
