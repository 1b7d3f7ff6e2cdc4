use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use timbre_core::{AdamConfig, AdamState, Tensor, TrainConfig, TransformSpec, VaeArchitecture, VaeModel};

use super::Cursor;
use crate::error::{Error, Result};

const CKPT_MAGIC: &[u8; 6] = b"TSVAE1";

/// SHA-256 of the canonical JSON form of a transform spec.
pub fn spec_hash(spec: &TransformSpec) -> [u8; 32] {
    let json = serde_json::to_vec(spec).expect("spec serializes");
    Sha256::digest(json).into()
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: TransformSpec,
    norm_constant: f64,
    arch: VaeArchitecture,
    config: TrainConfig,
    adam: Option<AdamConfig>,
    epoch: usize,
}

/// Model, optimizer and the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: TransformSpec,
    pub norm_constant: f64,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub model: VaeModel<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Layout: magic, 32-byte spec hash, u32 header-JSON length, header
    /// JSON (config echo), u32 tensor count, per tensor u32 rank, u32 dims
    /// and f32 values, u8 optimizer flag, optionally u64 step count, u64
    /// skipped steps and both moment sets, and finally u64 epoch.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            spec: self.spec,
            norm_constant: self.norm_constant,
            arch: self.model.arch().clone(),
            config: self.config.clone(),
            adam: self.optimizer.as_ref().map(|o| o.config),
            epoch: self.epoch,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&spec_hash(&self.spec));
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_tensor(&mut out, p);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step_count.to_le_bytes());
                out.extend_from_slice(&opt.skipped.to_le_bytes());
                opt.first_moment.iter().chain(&opt.second_moment).for_each(|t| put_tensor(&mut out, t));
            }
        }
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cur = Cursor::new(bytes, path);
        cur.magic(CKPT_MAGIC)?;
        let hash: [u8; 32] = cur.take(32)?.try_into().unwrap();
        let len = cur.u32()? as usize;
        let header: Header = serde_json::from_slice(cur.take(len)?)
            .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        if spec_hash(&header.spec) != hash {
            return Err(Error::format(path, "transform spec hash does not match the header"));
        }
        let count = cur.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = cur.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n = shape.iter().product();
            let t = Tensor::new(shape, cur.f32s(n)?).map_err(|e| Error::format(path, e.to_string()))?;
            params.push(t);
        }
        let model = VaeModel::from_params(header.arch, params)?;
        let optimizer = match cur.take(1)?[0] {
            0 => None,
            1 => {
                let config = header.adam.ok_or_else(|| Error::format(path, "optimizer state without config"))?;
                let step_count = cur.u64()?;
                let skipped = cur.u64()?;
                let mut moments = Vec::with_capacity(2 * count);
                for p in model.params().iter().chain(model.params()) {
                    let data = cur.f32s(p.len())?;
                    moments.push(Tensor::new(p.shape().to_vec(), data).expect("shape from model"));
                }
                let second_moment = moments.split_off(count);
                Some(AdamState {
                    config,
                    first_moment: moments,
                    second_moment,
                    step_count,
                    skipped,
                })
            }
            f => return Err(Error::format(path, format!("bad optimizer flag {f}"))),
        };
        let epoch = cur.u64()? as usize;
        cur.finish()?;
        if epoch != header.epoch {
            return Err(Error::format(path, "epoch counter disagrees with the header"));
        }
        Ok(Self {
            spec: header.spec,
            norm_constant: header.norm_constant,
            config: header.config,
            epoch,
            model,
            optimizer,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }
}
