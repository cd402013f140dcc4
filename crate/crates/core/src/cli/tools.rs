use std::fs;
use std::path::Path;

use super::manifest::{container_digests, digest, output_digests, RunManifest};
use super::{AttentionArgs, Failure, GradcheckArgs, ParamsArgs, SynthArgs};
use crate::adapter::{adapter_features, attention_salience, count_trainable_params, salience_grid, Mode};
use crate::dataio::{load_checkpoint, read_embedding_container, write_classifier_weights, write_embedding_container, write_labels, DataError};
use crate::gradcheck::{check_case, random_cases, Fault, DEFAULT_STEP};
use crate::rng::{stream, Stream};
use crate::synthetic::{separable_task, SyntheticSpec};

pub(super) fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let fault = a.inject_fault.map(|tensor| Fault { tensor, factor: 1.01 });
    let mut worst: Option<(String, &'static str, f64)> = None;
    for case in random_cases(a.trials, a.seed, a.dims) {
        let report = check_case(&case, DEFAULT_STEP, fault.as_ref())?;
        let w = report.worst();
        let status = if w.max_rel_error < a.tolerance { "ok" } else { "FAIL" };
        println!("{status:4} {case}  worst {} rel err {:.3e}", w.name, w.max_rel_error);
        if worst.as_ref().is_none_or(|(_, _, e)| w.max_rel_error > *e) {
            worst = Some((case.to_string(), w.name, w.max_rel_error));
        }
    }
    let (case, name, err) = worst.expect("at least one trial");
    if err < a.tolerance {
        println!("all {} configurations pass (max rel err {err:.3e} < {})", a.trials, a.tolerance);
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "gradient check failed: tensor {name} has relative error {err:.3e} ({case})"
        )))
    }
}

pub(super) fn attention(a: AttentionArgs) -> Result<(), Failure> {
    let set = read_embedding_container(&a.embeddings)?;
    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let image = set
        .position(&a.image_id)
        .ok_or_else(|| DataError::UnknownImageId(a.image_id.clone()))?;
    if a.view >= set.n_views {
        return Err(Failure::Usage(format!("--view {} but the container has {} views", a.view, set.n_views)));
    }
    let trace = adapter_features(set.view(image, a.view), &params, Mode::Eval, &mut stream(0, Stream::Dropout))?;
    let salience = attention_salience(&trace);
    let mut csv = String::new();
    let mut line = |row: &[f32]| {
        let cells: Vec<String> = row.iter().map(f32::to_string).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    };
    match salience_grid(&salience) {
        Some(grid) => grid.rows().into_iter().for_each(|r| line(&r.to_vec())),
        None => line(salience.as_slice().expect("contiguous")),
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("attention.csv"), csv)?;

    let settings = serde_json::json!({ "image_id": a.image_id, "view": a.view });
    let mut manifest = RunManifest::new("attention", None, settings);
    manifest.inputs.push(digest("checkpoint", &a.checkpoint)?);
    manifest.inputs.extend(container_digests("embeddings", &a.embeddings)?);
    manifest.outputs = output_digests(&a.out, &["attention.csv"])?;
    manifest.write(&a.out)?;
    println!("wrote {} salience values for {}", salience.len(), a.image_id);
    Ok(())
}

fn grouped(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub(super) fn params(a: ParamsArgs) -> Result<(), Failure> {
    let bottleneck = a.bottleneck.unwrap_or((a.dim / 4).max(1));
    let bias = a.bias && !a.no_bias;
    let total = count_trainable_params(a.dim, bottleneck, a.heads, bias)?;
    let (d, db, b) = (a.dim as u64, bottleneck as u64, bias as u64);
    println!("trainable parameters: {}", grouped(total));
    println!("  bottleneck mlp   {}", grouped(2 * d * db + b * (db + d)));
    println!("  layer norm       {}", grouped(2 * d));
    println!("  attention        {}", grouped(4 * d * d + b * 4 * d));
    println!("(D={} d_b={} heads={} biases={})", a.dim, bottleneck, a.heads, if bias { "on" } else { "off" });
    Ok(())
}

pub(super) fn synth(a: SynthArgs) -> Result<(), Failure> {
    if a.classes < 2 || a.dim == 0 || a.patches == 0 || a.views == 0 || a.samples < a.classes {
        return Err(Failure::Usage("need >= 2 classes, >= 1 patch/view/dim and a sample per class".into()));
    }
    let spec = SyntheticSpec {
        classes: a.classes,
        dim: a.dim,
        n_patches: a.patches,
        samples: a.samples,
        views: a.views,
        signal_patches: a.signal_patches,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let task = separable_task(&spec);
    fs::create_dir_all(&a.out)?;
    write_embedding_container(&task.embeddings, &a.out.join("embeddings.mhe1"))?;
    write_classifier_weights(&task.weights, &a.out.join("class_weights.mhe1"))?;
    write_labels(&task.labels, &task.weights.class_names, &a.out.join("labels.csv"))?;
    println!("wrote synthetic task to {}", display(&a.out));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
