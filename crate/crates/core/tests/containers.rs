//! Byte-level interoperability with files written by an external exporter.

use std::fs;
use std::path::Path;

use mhadapter_core::dataio::{
    read_classifier_weights, read_embedding_container, read_labels, write_embedding_container, DataError,
};

fn header(n: u32, views: u32, tokens: u32, dim: u32, temperature: Option<f32>) -> Vec<u8> {
    let mut b = b"MHE1".to_vec();
    let flags = temperature.is_some() as u32;
    for v in [1, n, views, tokens, dim, 0, flags] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(t) = temperature {
        b.extend_from_slice(&t.to_le_bytes());
    }
    b
}

fn write(path: &Path, bytes: &[u8], names: &[&str]) {
    fs::write(path, bytes).unwrap();
    let mut ids = names.join("\n");
    ids.push('\n');
    fs::write(format!("{}.ids", path.display()), ids).unwrap();
}

#[test]
fn vit_b16_shaped_export() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.mhe1");
    let (n, v, t, d) = (3u32, 2u32, 197u32, 512u32);
    let mut bytes = header(n, v, t, d, None);
    let count = (n * v * t * d) as usize;
    for i in 0..count {
        bytes.extend_from_slice(&((i % 1000) as f32 * 1e-3).to_le_bytes());
    }
    write(&path, &bytes, &["a.jpg", "b.jpg", "c.jpg"]);
    let set = read_embedding_container(&path).unwrap();
    assert_eq!((set.n_images(), set.n_views, set.n_tokens, set.dim), (3, 2, 197, 512));
    assert_eq!(set.n_patches(), 196);
    let second_view = set.view(1, 1);
    let offset = ((1 * v + 1) * t * d) as usize;
    assert_eq!(second_view[[0, 0]], (offset % 1000) as f32 * 1e-3);

    let again = dir.path().join("again.mhe1");
    write_embedding_container(&set, &again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), bytes);
}

#[test]
fn platform_weight_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("platform.mhe1");
    let names = [
        "driving surface",
        "walking surface",
        "cycling surface",
        "railway",
        "fields",
        "tunnel",
    ];
    let mut bytes = header(6, 1, 1, 4, Some(0.01));
    for i in 0..24 {
        bytes.extend_from_slice(&(i as f32).to_le_bytes());
    }
    write(&path, &bytes, &names);
    fs::write(format!("{}.template", path.display()), "a photo taken on {CLASS}").unwrap();
    let w = read_classifier_weights(&path).unwrap();
    assert_eq!(w.n_classes(), 6);
    assert_eq!(w.class_names, names);
    assert_eq!(w.temperature, 0.01);
    assert_eq!(w.prompt_template, "a photo taken on {CLASS}");
    assert_eq!(w.weights[[5, 3]], 23.0);

    let labels = dir.path().join("labels.csv");
    fs::write(&labels, "image_id,label\nx1,railway\nx2,tunnel\n").unwrap();
    let owned: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let table = read_labels(&labels, &owned).unwrap();
    assert_eq!(table.get("x2"), Some(5));
}

#[test]
fn malformed_exports_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.mhe1");

    let mut short = header(1, 1, 2, 3, None);
    short.extend_from_slice(&[0u8; 20]);
    write(&path, &short, &["only"]);
    assert!(matches!(read_embedding_container(&path), Err(DataError::TruncatedPayload { .. })));

    let mut dup = header(2, 1, 2, 1, None);
    dup.extend_from_slice(&[0u8; 16]);
    write(&path, &dup, &["same", "same"]);
    assert!(matches!(read_embedding_container(&path), Err(DataError::DuplicateId(_))));

    let mut zero_t = header(2, 1, 1, 1, Some(0.0));
    zero_t.extend_from_slice(&[0u8; 8]);
    write(&path, &zero_t, &["p", "q"]);
    assert!(matches!(read_classifier_weights(&path), Err(DataError::NonPositiveTemperature(_))));

    let mut count = header(2, 1, 1, 1, Some(0.5));
    count.extend_from_slice(&[0u8; 8]);
    write(&path, &count, &["p", "q", "r"]);
    assert!(matches!(read_classifier_weights(&path), Err(DataError::ClassCountMismatch { .. })));
}
