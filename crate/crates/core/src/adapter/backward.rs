use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::{AdapterError, AdapterParams, AdapterTensors, ClassifierHead, FeatureTrace, ForwardTrace, Result};
use crate::Real;

fn bias_grad<T: Real>(present: bool, g: &Array2<T>) -> Option<Array1<T>> {
    present.then(|| g.sum_axis(Axis(0)))
}

/// Reverse pass from a gradient on the logits to every trainable tensor.
///
/// The classifier rows are frozen and get no gradient. The dropout mask is
/// taken from the trace, never resampled.
pub fn adapter_backward<T: Real>(
    trace: &ForwardTrace<T>,
    d_logits: ArrayView1<'_, T>,
    params: &AdapterParams<T>,
    head: &ClassifierHead<T>,
) -> Result<AdapterTensors<T>> {
    if d_logits.len() != trace.output.logits.len() || head.n_classes() != d_logits.len() {
        return Err(AdapterError::TraceMismatch(format!(
            "{} logit gradients for {} logits / {} classes",
            d_logits.len(),
            trace.output.logits.len(),
            head.n_classes()
        )));
    }
    let d_blended = head.backward(&trace.output, d_logits);
    backward_from_feature(&trace.features, d_blended.view(), params)
}

/// Reverse pass from a gradient on the blended feature `f*`.
pub fn backward_from_feature<T: Real>(
    trace: &FeatureTrace<T>,
    d_blended: ArrayView1<'_, T>,
    params: &AdapterParams<T>,
) -> Result<AdapterTensors<T>> {
    let cfg = &params.config;
    let t = &params.tensors;
    let (n, d) = trace.patches.dim();
    if d != cfg.dim
        || d_blended.len() != d
        || trace.attn.attention.shape() != [cfg.heads, n, n]
        || trace.mlp_hidden.ncols() != cfg.bottleneck
    {
        return Err(AdapterError::TraceMismatch(
            "trace shapes do not match the adapter configuration".into(),
        ));
    }
    let bias = cfg.use_bias;

    // blend and mean pooling: every token receives alpha * g / N
    let alpha = T::lit(cfg.alpha);
    let per_token = d_blended.mapv(|g| alpha * g / T::lit(n as f64));
    let d_drop = per_token.broadcast((n, d)).unwrap().to_owned();
    let d_mhsa = d_drop * &trace.dropout_mask * trace.dropout_scale;

    // output projection
    let d_w_o = trace.attn.concat.t().dot(&d_mhsa);
    let d_b_o = bias_grad(bias, &d_mhsa);
    let d_concat = d_mhsa.dot(&t.w_o.t());

    // per-head attention
    let heads = cfg.heads;
    let dk = d / heads;
    let scale = T::one() / T::lit(dk as f64).sqrt();
    let (mut d_q, mut d_k, mut d_v) = (Array2::zeros((n, d)), Array2::zeros((n, d)), Array2::zeros((n, d)));
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let a = trace.attn.attention.index_axis(Axis(0), h);
        let d_head = d_concat.slice(cols);
        let d_a = d_head.dot(&trace.attn.v.slice(cols).t());
        d_v.slice_mut(cols).assign(&a.t().dot(&d_head));
        // softmax backward, row by row
        let mut d_scores = Array2::zeros((n, n));
        for i in 0..n {
            let (ar, gr) = (a.row(i), d_a.row(i));
            let dot = ar.dot(&gr);
            d_scores
                .row_mut(i)
                .assign(&ndarray::Zip::from(&ar).and(&gr).map_collect(|&p, &g| p * (g - dot) * scale));
        }
        d_q.slice_mut(cols).assign(&d_scores.dot(&trace.attn.k.slice(cols)));
        d_k.slice_mut(cols).assign(&d_scores.t().dot(&trace.attn.q.slice(cols)));
    }

    let x_ln = &trace.ln.output;
    let d_w_q = x_ln.t().dot(&d_q);
    let d_w_k = x_ln.t().dot(&d_k);
    let d_w_v = x_ln.t().dot(&d_v);
    let d_b_q = bias_grad(bias, &d_q);
    let d_b_k = bias_grad(bias, &d_k);
    let d_b_v = bias_grad(bias, &d_v);
    let d_ln = d_q.dot(&t.w_q.t()) + d_k.dot(&t.w_k.t()) + d_v.dot(&t.w_v.t());

    // layer norm
    let x_hat = &trace.ln.normalized;
    let d_gamma = (&d_ln * x_hat).sum_axis(Axis(0));
    let d_beta = d_ln.sum_axis(Axis(0));
    let d_hat = &d_ln * &t.gamma;
    let width = T::lit(d as f64);
    let mut d_av = Array2::zeros((n, d));
    for i in 0..n {
        let (g, xh) = (d_hat.row(i), x_hat.row(i));
        let mean_g = g.sum() / width;
        let mean_gx = g.dot(&xh) / width;
        let r = trace.ln.inv_std[i];
        d_av.row_mut(i)
            .assign(&ndarray::Zip::from(&g).and(&xh).map_collect(|&gj, &xj| r * (gj - mean_g - xj * mean_gx)));
    }

    // bottleneck MLP
    let activated = trace.mlp_hidden.mapv(|x| x.max(T::zero()));
    let d_w_v2 = activated.t().dot(&d_av);
    let d_b_v2 = bias_grad(bias, &d_av);
    let mut d_hidden = d_av.dot(&t.w_v2.t());
    d_hidden.zip_mut_with(&trace.mlp_hidden, |g, &h| {
        if h <= T::zero() {
            *g = T::zero();
        }
    });
    let d_w_v1 = trace.patches.t().dot(&d_hidden);
    let d_b_v1 = bias_grad(bias, &d_hidden);

    Ok(AdapterTensors {
        w_v1: d_w_v1,
        b_v1: d_b_v1,
        w_v2: d_w_v2,
        b_v2: d_b_v2,
        gamma: d_gamma,
        beta: d_beta,
        w_q: d_w_q,
        b_q: d_b_q,
        w_k: d_w_k,
        b_k: d_b_k,
        w_v: d_w_v,
        b_v: d_b_v,
        w_o: d_w_o,
        b_o: d_b_o,
    })
}
