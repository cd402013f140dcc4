//! "MHC1" checkpoints.
//!
//! Layout (little-endian): magic, u32 version, u32 D, u32 bottleneck,
//! u32 heads, f64 alpha, f64 dropout, u32 epoch, f64 best validation
//! accuracy, f64 layer-norm epsilon, u32 flags (bit 0: biases), u32 tensor
//! count, then each tensor as u16 name length, name bytes, u32 rank, u32 dims,
//! raw f32 values.

use std::fs;
use std::path::Path;

use super::{io_err, DataError, Result};
use crate::adapter::{AdapterConfig, AdapterParams, AdapterTensors};

const MAGIC: [u8; 4] = *b"MHC1";
const VERSION: u32 = 1;
const FLAG_BIAS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    /// Zero-based epoch the parameters were taken from.
    pub epoch: u32,
    pub best_val_accuracy: f64,
}

pub fn save_checkpoint(params: &AdapterParams<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    params
        .validate()
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    let cfg = &params.config;
    let mut out = Vec::with_capacity(64 + 4 * params.tensors.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cfg.dim, cfg.bottleneck, cfg.heads] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.alpha.to_le_bytes());
    out.extend_from_slice(&cfg.dropout_p.to_le_bytes());
    out.extend_from_slice(&meta.epoch.to_le_bytes());
    out.extend_from_slice(&meta.best_val_accuracy.to_le_bytes());
    out.extend_from_slice(&cfg.ln_eps.to_le_bytes());
    let flags = if cfg.use_bias { FLAG_BIAS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    let named = params.tensors.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in &named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(DataError::TruncatedPayload {
                expected: (self.pos as u64).saturating_add(n as u64),
                actual: self.bytes.len() as u64,
            }),
        }
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(AdapterParams<f32>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            expected: MAGIC,
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let (dim, bottleneck, heads) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let alpha = c.f64()?;
    let dropout_p = c.f64()?;
    let epoch = c.u32()?;
    let best_val_accuracy = c.f64()?;
    let ln_eps = c.f64()?;
    let flags = c.u32()?;
    let config = AdapterConfig {
        dim,
        bottleneck,
        heads,
        alpha,
        dropout_p,
        ln_eps,
        use_bias: flags & FLAG_BIAS != 0,
    };
    config
        .validate()
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut tensors = AdapterTensors::<f32>::zeros(&config);
    let count = c.u32()? as usize;
    let mut slots = tensors.named_mut();
    if count != slots.len() {
        return Err(DataError::ShapeMismatch(format!(
            "checkpoint holds {count} tensors, configuration needs {}",
            slots.len()
        )));
    }
    for (name, slot) in slots.iter_mut() {
        let len = c.u16()? as usize;
        let found = c.take(len)?;
        if found != name.as_bytes() {
            return Err(DataError::ShapeMismatch(format!(
                "expected tensor {name}, found {:?}",
                String::from_utf8_lossy(found)
            )));
        }
        let rank = c.u32()? as usize;
        let dims = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != slot.shape() {
            return Err(DataError::ShapeMismatch(format!(
                "tensor {name} has shape {dims:?}, configuration needs {:?}",
                slot.shape()
            )));
        }
        let raw = c.take(4 * slot.len())?;
        for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    drop(slots);
    if c.pos != bytes.len() {
        return Err(DataError::TrailingData {
            expected: c.pos as u64,
            actual: bytes.len() as u64,
        });
    }
    let params = AdapterParams { config, tensors };
    params
        .validate()
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok((
        params,
        CheckpointMeta {
            epoch,
            best_val_accuracy,
        },
    ))
}

/// Loads a checkpoint and checks its structure against a run configuration.
/// Blend ratio and dropout are run-time settings and may differ.
pub fn load_checkpoint_for(path: &Path, expected: &AdapterConfig) -> Result<(AdapterParams<f32>, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    let got = &params.config;
    let pairs = [
        ("dim", got.dim, expected.dim),
        ("bottleneck", got.bottleneck, expected.bottleneck),
        ("heads", got.heads, expected.heads),
        ("biases", got.use_bias as usize, expected.use_bias as usize),
    ];
    for (what, g, e) in pairs {
        if g != e {
            return Err(DataError::ShapeMismatch(format!(
                "checkpoint has {what} = {g}, run is configured with {e}"
            )));
        }
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use ndarray::ArrayViewD;

    fn bitwise_eq(a: &ArrayViewD<'_, f32>, b: &ArrayViewD<'_, f32>) -> bool {
        a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    fn params(heads: usize, use_bias: bool) -> AdapterParams<f32> {
        let cfg = AdapterConfig {
            heads,
            use_bias,
            ..AdapterConfig::for_dim(16)
        };
        let mut p = AdapterParams::init(cfg, &mut stream(3, Stream::Init)).unwrap();
        if let Some(b) = p.tensors.b_q.as_mut() {
            b.fill(-0.25);
        }
        p
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mhc1");
        for use_bias in [false, true] {
            let p = params(4, use_bias);
            let meta = CheckpointMeta {
                epoch: 17,
                best_val_accuracy: 0.8125,
            };
            save_checkpoint(&p, &meta, &path).unwrap();
            let (back, m) = load_checkpoint(&path).unwrap();
            assert_eq!(m, meta);
            assert_eq!(back.config, p.config);
            for ((na, a), (nb, b)) in back.tensors.named().iter().zip(p.tensors.named()) {
                assert_eq!(*na, nb);
                assert!(bitwise_eq(a, &b), "{na}");
            }
        }
    }

    #[test]
    fn head_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mhc1");
        let p = params(4, false);
        save_checkpoint(&p, &CheckpointMeta { epoch: 0, best_val_accuracy: 0.0 }, &path).unwrap();
        let run = AdapterConfig { heads: 8, ..p.config };
        assert!(matches!(load_checkpoint_for(&path, &run), Err(DataError::ShapeMismatch(_))));
        let run = AdapterConfig { alpha: 0.0, ..p.config };
        assert!(load_checkpoint_for(&path, &run).is_ok());
    }

    #[test]
    fn header_starts_with_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mhc1");
        save_checkpoint(&params(2, false), &CheckpointMeta { epoch: 3, best_val_accuracy: 0.5 }, &path).unwrap();
        let b = fs::read(&path).unwrap();
        assert_eq!(&b[..4], b"MHC1");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 16);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mhc1");
        save_checkpoint(&params(4, false), &CheckpointMeta { epoch: 0, best_val_accuracy: 0.0 }, &path).unwrap();
        let good = fs::read(&path).unwrap();
        fs::write(&path, &good[..good.len() - 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(DataError::TruncatedPayload { .. })));
        let mut extra = good.clone();
        extra.push(0);
        fs::write(&path, &extra).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(DataError::TrailingData { .. })));
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"MHE1");
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn non_finite_params_not_saved() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = params(4, false);
        p.tensors.w_o[[0, 0]] = f32::NAN;
        let path = dir.path().join("c");
        assert!(save_checkpoint(&p, &CheckpointMeta { epoch: 0, best_val_accuracy: 0.0 }, &path).is_err());
        assert!(!path.exists());
    }
}
