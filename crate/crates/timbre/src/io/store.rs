use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use timbre_core::TransformSpec;

use super::{read_json, write_json, Cursor};
use crate::error::{Error, Result};

const STORE_MAGIC: &[u8; 4] = b"TSF1";

/// Normalized magnitude frames of one corpus, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStore {
    pub spec: TransformSpec,
    pub norm_constant: f64,
    pub frames: Vec<Vec<f32>>,
}

impl FrameStore {
    pub fn frame_len(&self) -> usize {
        self.spec.frame_len()
    }

    /// Layout: magic, u32 spec-JSON length, spec JSON, u32 F, u64 count,
    /// f64 norm constant, then `count·F` f32 values. All little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = serde_json::to_vec(&self.spec).expect("spec serializes");
        let f = self.frame_len();
        let mut out = Vec::with_capacity(32 + spec.len() + 4 * f * self.frames.len());
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&(f as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.norm_constant.to_le_bytes());
        for frame in &self.frames {
            for v in frame {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cur = Cursor::new(bytes, path);
        cur.magic(STORE_MAGIC)?;
        let spec_len = cur.u32()? as usize;
        let spec: TransformSpec = serde_json::from_slice(cur.take(spec_len)?)
            .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        let f = cur.u32()? as usize;
        if f != spec.frame_len() {
            return Err(Error::format(path, format!("F = {f} but the transform has {} bins", spec.frame_len())));
        }
        let count = cur.u64()? as usize;
        let norm_constant = cur.f64()?;
        let frames = (0..count).map(|_| cur.f32s(f)).collect::<Result<_>>()?;
        cur.finish()?;
        Ok(Self { spec, norm_constant, frames })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn rows(&self, idx: impl IntoIterator<Item = usize>) -> Vec<Vec<f64>> {
        idx.into_iter()
            .map(|i| self.frames[i].iter().map(|&v| v as f64).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    /// Relative to the corpus root.
    pub path: String,
    pub class_label: Option<String>,
    pub pitch: Option<String>,
    pub dynamics: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

/// Sidecar of a frame store: entry `i` describes frame `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub store: String,
    pub spec: TransformSpec,
    pub norm_constant: f64,
    pub seed: u64,
    pub frame_ms: f64,
    pub test_ratio: f64,
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedFile>,
}

impl CorpusManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn labels(&self) -> Vec<Option<String>> {
        self.entries.iter().map(|e| e.class_label.clone()).collect()
    }

    /// Check the manifest against the store it describes.
    pub fn check(&self, store: &FrameStore, path: &Path) -> Result<()> {
        if store.frames.len() != self.entries.len() {
            return Err(Error::format(
                path,
                format!("manifest lists {} entries, store holds {} frames", self.entries.len(), store.frames.len()),
            ));
        }
        if store.spec != self.spec {
            return Err(Error::format(path, "manifest and store disagree on the transform"));
        }
        Ok(())
    }
}
