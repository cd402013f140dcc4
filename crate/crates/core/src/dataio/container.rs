use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use super::{io_err, DataError, Result};

pub const CONTAINER_MAGIC: [u8; 4] = *b"MHE1";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;
const FLAG_TEMPERATURE: u32 = 1;
const HEADER_LEN: u64 = 4 + 7 * 4;

/// Frozen token embeddings for a set of images.
///
/// `data` is laid out image-major, then view, then token, then feature.
/// Token 0 of every view is the class token; tokens `1..n_tokens` are patches.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub image_ids: Vec<String>,
    pub n_views: usize,
    pub n_tokens: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(
        image_ids: Vec<String>,
        n_views: usize,
        n_tokens: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let set = Self {
            image_ids,
            n_views,
            n_tokens,
            dim,
            data,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    /// Number of patch tokens per view (excludes the class token).
    pub fn n_patches(&self) -> usize {
        self.n_tokens - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(DataError::Invalid("n_views must be at least 1".into()));
        }
        if self.n_tokens < 2 {
            return Err(DataError::Invalid(format!(
                "n_tokens must be at least 2 (class token + one patch), got {}",
                self.n_tokens
            )));
        }
        if self.dim == 0 {
            return Err(DataError::Invalid("dim must be at least 1".into()));
        }
        let expected = self.n_images() * self.n_views * self.n_tokens * self.dim;
        if self.data.len() != expected {
            return Err(DataError::Invalid(format!(
                "data holds {} values, shape requires {expected}",
                self.data.len()
            )));
        }
        check_ids(&self.image_ids)?;
        Ok(())
    }

    /// Tokens of one augmentation view as an `n_tokens × dim` matrix.
    pub fn view(&self, image: usize, view: usize) -> ArrayView2<'_, f32> {
        let stride = self.n_tokens * self.dim;
        let start = (image * self.n_views + view) * stride;
        ArrayView2::from_shape((self.n_tokens, self.dim), &self.data[start..start + stride])
            .expect("view slice matches shape")
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.image_ids.iter().position(|x| x == id)
    }
}

/// Text-derived classifier: one row per class, never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    pub class_names: Vec<String>,
    pub weights: Array2<f32>,
    pub temperature: f32,
    pub prompt_template: String,
}

impl ClassifierWeights {
    pub fn new(
        class_names: Vec<String>,
        weights: Array2<f32>,
        temperature: f32,
        prompt_template: impl Into<String>,
    ) -> Result<Self> {
        let w = Self {
            class_names,
            weights,
            temperature,
            prompt_template: prompt_template.into(),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(DataError::Invalid(format!(
                "need at least 2 classes, got {}",
                self.class_names.len()
            )));
        }
        if self.weights.nrows() != self.class_names.len() {
            return Err(DataError::ClassCountMismatch {
                header: self.weights.nrows(),
                manifest: self.class_names.len(),
            });
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(DataError::NonPositiveTemperature(self.temperature));
        }
        check_ids(&self.class_names)?;
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

fn check_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if id.contains('\n') || id.contains('\r') {
            return Err(DataError::Invalid(format!("id {id:?} contains a line break")));
        }
        if !seen.insert(id.as_str()) {
            return Err(DataError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// `<container>.ids`, the line-per-record manifest next to a container.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

fn template_path(path: &Path) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(".template");
    PathBuf::from(s)
}

struct Header {
    n_records: usize,
    n_views: usize,
    n_tokens: usize,
    dim: usize,
    temperature: Option<f32>,
}

fn encode(header: &Header, payload: impl Iterator<Item = f32>, len_hint: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + 4 + 4 * len_hint);
    out.extend_from_slice(&CONTAINER_MAGIC);
    for v in [
        VERSION,
        header.n_records as u32,
        header.n_views as u32,
        header.n_tokens as u32,
        header.dim as u32,
        DTYPE_F32,
        if header.temperature.is_some() { FLAG_TEMPERATURE } else { 0 },
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(t) = header.temperature {
        out.extend_from_slice(&t.to_le_bytes());
    }
    for x in payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f32>)> {
    let actual = bytes.len() as u64;
    if actual < HEADER_LEN {
        return Err(DataError::TruncatedPayload {
            expected: HEADER_LEN,
            actual,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != CONTAINER_MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            expected: CONTAINER_MAGIC,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let (n_records, n_views, n_tokens, dim) = (word(1), word(2), word(3), word(4));
    let dtype = word(5);
    if dtype != DTYPE_F32 {
        return Err(DataError::UnsupportedDtype(dtype));
    }
    let flags = word(6);
    let mut offset = HEADER_LEN;
    let temperature = if flags & FLAG_TEMPERATURE != 0 {
        offset += 4;
        if actual < offset {
            return Err(DataError::TruncatedPayload {
                expected: offset,
                actual,
            });
        }
        let at = HEADER_LEN as usize;
        Some(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()))
    } else {
        None
    };
    let n_values = n_records as u64 * n_views as u64 * n_tokens as u64 * dim as u64;
    let expected = offset + 4 * n_values;
    if actual < expected {
        return Err(DataError::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(DataError::TrailingData { expected, actual });
    }
    let payload = bytes[offset as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        Header {
            n_records: n_records as usize,
            n_views: n_views as usize,
            n_tokens: n_tokens as usize,
            dim: dim as usize,
            temperature,
        },
        payload,
    ))
}

fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn write_manifest(path: &Path, ids: &[String]) -> Result<()> {
    let side = sidecar_path(path);
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    fs::write(&side, text).map_err(io_err(&side))
}

pub fn read_embedding_container(path: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (header, data) = decode(&bytes)?;
    let ids = read_manifest(path)?;
    if ids.len() != header.n_records {
        return Err(DataError::ManifestMismatch {
            expected: header.n_records,
            found: ids.len(),
        });
    }
    EmbeddingSet::new(ids, header.n_views, header.n_tokens, header.dim, data)
}

pub fn write_embedding_container(set: &EmbeddingSet, path: &Path) -> Result<()> {
    set.validate()?;
    let header = Header {
        n_records: set.n_images(),
        n_views: set.n_views,
        n_tokens: set.n_tokens,
        dim: set.dim,
        temperature: None,
    };
    let bytes = encode(&header, set.data.iter().copied(), set.data.len());
    fs::write(path, bytes).map_err(io_err(path))?;
    write_manifest(path, &set.image_ids)
}

/// Reads a weight container: one record per class, one view, one token.
///
/// Class names come from the `.ids` sidecar; an optional `.template` sidecar
/// carries the prompt template used to produce the rows.
pub fn read_classifier_weights(path: &Path) -> Result<ClassifierWeights> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (header, data) = decode(&bytes)?;
    if header.n_views != 1 || header.n_tokens != 1 {
        return Err(DataError::Invalid(format!(
            "weight file must have n_views = n_tokens = 1, got {} and {}",
            header.n_views, header.n_tokens
        )));
    }
    let temperature = header.temperature.ok_or(DataError::MissingTemperature)?;
    if !(temperature > 0.0) {
        return Err(DataError::NonPositiveTemperature(temperature));
    }
    let names = read_manifest(path)?;
    if names.len() != header.n_records {
        return Err(DataError::ClassCountMismatch {
            header: header.n_records,
            manifest: names.len(),
        });
    }
    let tpl = template_path(path);
    let prompt_template = match fs::read_to_string(&tpl) {
        Ok(s) => s.trim_end_matches('\n').to_owned(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(io_err(&tpl)(e)),
    };
    let weights = Array2::from_shape_vec((header.n_records, header.dim), data)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    ClassifierWeights::new(names, weights, temperature, prompt_template)
}

pub fn write_classifier_weights(w: &ClassifierWeights, path: &Path) -> Result<()> {
    w.validate()?;
    let header = Header {
        n_records: w.n_classes(),
        n_views: 1,
        n_tokens: 1,
        dim: w.dim(),
        temperature: Some(w.temperature),
    };
    let bytes = encode(&header, w.weights.iter().copied(), w.weights.len());
    fs::write(path, bytes).map_err(io_err(path))?;
    write_manifest(path, &w.class_names)?;
    if !w.prompt_template.is_empty() {
        let tpl = template_path(path);
        fs::write(&tpl, format!("{}\n", w.prompt_template)).map_err(io_err(&tpl))?;
    }
    Ok(())
}
