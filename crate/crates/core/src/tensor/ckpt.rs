//! Checkpoint files: a JSON manifest plus a sidecar blob of little-endian
//! `f64` values laid out in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

pub const CKPT_VERSION: &str = "remix-ckpt-v1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    dtype: String,
    blob: String,
    /// Component name → tensor names belonging to it.
    components: BTreeMap<String, Vec<String>>,
    tensors: Vec<Entry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: u64,
}

/// In-memory checkpoint contents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub components: BTreeMap<String, Vec<String>>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, component: &str, name: String, t: Tensor) {
        self.components
            .entry(component.to_string())
            .or_default()
            .push(name.clone());
        self.tensors.push((name, t));
    }

    pub fn extend(&mut self, component: &str, tensors: Vec<(String, Tensor)>) {
        for (name, t) in tensors {
            self.push(component, name, t);
        }
    }

    pub fn tensor_map(&self) -> BTreeMap<String, Tensor> {
        self.tensors.iter().cloned().collect()
    }

    fn paths(base: &Path) -> (PathBuf, PathBuf) {
        (base.with_extension("json"), base.with_extension("bin"))
    }

    /// Writes `<base>.json` and `<base>.bin`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let (json_path, bin_path) = Self::paths(base);
        let mut blob = Vec::with_capacity(self.tensors.iter().map(|(_, t)| t.len() * 8).sum());
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
            });
            for x in t.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = Manifest {
            version: CKPT_VERSION.to_string(),
            dtype: "f64".to_string(),
            blob: bin_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            components: self.components.clone(),
            tensors: entries,
            meta: self.meta.clone(),
        };
        if let Some(dir) = json_path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&bin_path, blob)?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        fs::write(&json_path, text)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (json_path, _) = Self::paths(base);
        let text = fs::read_to_string(&json_path)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", json_path.display())))?;
        if manifest.version != CKPT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported version `{}` (expected `{CKPT_VERSION}`)",
                manifest.version
            )));
        }
        if manifest.dtype != "f64" {
            return Err(TensorError::Checkpoint(format!(
                "unsupported dtype `{}`",
                manifest.dtype
            )));
        }
        let blob_path = json_path.with_file_name(&manifest.blob);
        let blob = fs::read(&blob_path)?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * 8;
            if end > blob.len() {
                return Err(TensorError::Checkpoint(format!(
                    "tensor `{}` overruns the blob",
                    e.name
                )));
            }
            let data = blob[start..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((e.name, Tensor::from_parts(e.shape, data)?));
        }
        Ok(Self {
            tensors,
            components: manifest.components,
            meta: manifest.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_preserves_bits_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut ck = Checkpoint::new();
        ck.push(
            "agent",
            "agent.w".into(),
            Tensor::matrix(2, 2, vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0]).unwrap(),
        );
        ck.push("critic", "critic.b".into(), Tensor::vector(vec![0.1, 0.2, 0.3]));
        ck.meta = serde_json::json!({"step": 7});
        let base = dir.path().join("ckpt/latest");
        ck.save(&base).unwrap();

        let text = std::fs::read_to_string(base.with_extension("json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["version"], "remix-ckpt-v1");
        assert_eq!(v["tensors"][1]["offset"], 32);
        assert_eq!(std::fs::metadata(base.with_extension("bin")).unwrap().len(), 56);

        let back = Checkpoint::load(&base).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("x");
        Checkpoint::new().save(&base).unwrap();
        let p = base.with_extension("json");
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("remix-ckpt-v1", "remix-ckpt-v0");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(Checkpoint::load(&base), Err(TensorError::Checkpoint(_))));
    }
}
