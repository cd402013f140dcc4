use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Failure;
use crate::dataio::sidecar_path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run. Holds no timestamps or output
/// locations, so identical runs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub settings: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<InputDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest(role: &str, path: &Path) -> Result<InputDigest, Failure> {
    Ok(InputDigest {
        role: role.into(),
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Digests of a container and its `.ids` sidecar.
pub fn container_digests(role: &str, path: &Path) -> Result<Vec<InputDigest>, Failure> {
    Ok(vec![digest(role, path)?, digest(&format!("{role}.ids"), &sidecar_path(path))?])
}

/// Digests of files written into `dir`, recorded by file name only.
pub fn output_digests(dir: &Path, names: &[&str]) -> Result<Vec<InputDigest>, Failure> {
    names
        .iter()
        .map(|n| {
            Ok(InputDigest {
                role: "output".into(),
                path: (*n).into(),
                sha256: sha256_file(&dir.join(n))?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, settings: serde_json::Value) -> Self {
        Self {
            tool: "mhadapter".into(),
            version: crate::VERSION.into(),
            command: command.into(),
            seed,
            settings,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        fs::write(dir.join("manifest.json"), s)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, Failure> {
        let s = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&s).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }

    /// Fails when any recorded input no longer has the recorded digest.
    pub fn verify_inputs(&self) -> Result<(), Failure> {
        for input in &self.inputs {
            let now = sha256_file(Path::new(&input.path))?;
            if now != input.sha256 {
                return Err(Failure::Data(format!("{} changed since the manifest was written", input.path)));
            }
        }
        Ok(())
    }
}
