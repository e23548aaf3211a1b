//! Binary checkpoint of one stream's model and Adam state.
//!
//! Little-endian layout:
//!
//! ```text
//! b"WSAL" | version: u32 | d: u32 | h: u32 | C: u32
//! model tensors (w1, b1, w2, b2, classifier, u_fg, u_bg) as f64
//! step_count: u64 | lr, beta1, beta2, epsilon: f64
//! first-moment tensors | second-moment tensors
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelDims, ParamTensors, StreamModel};
use crate::optimizer::{AdamConfig, AdamState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WSAL";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: StreamModel,
    pub adam: AdamState,
}

fn expected_len(dims: ModelDims) -> u64 {
    let params = dims.num_params() as u64;
    HEADER_LEN as u64 + 8 * params + 8 + 4 * 8 + 2 * 8 * params
}

fn put_tensors(out: &mut Vec<u8>, t: &impl ParamTensors) {
    for tensor in t.tensors() {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length prechecked");
        self.pos += N;
        out
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }

    fn fill(&mut self, t: &mut impl ParamTensors) {
        for tensor in t.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = self.f64();
            }
        }
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let dims = self.model.dims;
        let mut out = Vec::with_capacity(expected_len(dims) as usize);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for n in [dims.feature_dim, dims.hidden_dim, dims.num_classes] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        put_tensors(&mut out, &self.model);
        out.extend_from_slice(&self.adam.step_count.to_le_bytes());
        let c = self.adam.config;
        for v in [c.lr, c.beta1, c.beta2, c.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_tensors(&mut out, &self.adam.first_moment);
        put_tensors(&mut out, &self.adam.second_moment);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() >= 4 && bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: CHECKPOINT_MAGIC,
                found: bytes[..4].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Length {
                path: path.to_path_buf(),
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32();
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let dims = ModelDims::new(r.u32() as usize, r.u32() as usize, r.u32() as usize);
        let expected = expected_len(dims);
        if bytes.len() as u64 != expected {
            return Err(Error::Length {
                path: path.to_path_buf(),
                expected,
                actual: bytes.len() as u64,
            });
        }
        let mut model = StreamModel::zeros(dims);
        r.fill(&mut model);
        let step_count = r.u64();
        let config = AdamConfig {
            lr: r.f64(),
            beta1: r.f64(),
            beta2: r.f64(),
            epsilon: r.f64(),
        };
        let mut first_moment = Gradients::zeros(dims);
        let mut second_moment = Gradients::zeros(dims);
        r.fill(&mut first_moment);
        r.fill(&mut second_moment);
        model.validate()?;
        Ok(Self {
            model,
            adam: AdamState {
                config,
                step_count,
                first_moment,
                second_moment,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Loads and checks the feature dimension against the data it will see.
    pub fn load_for_features(path: impl AsRef<Path>, feature_dim: usize) -> Result<Self> {
        let ckpt = Self::load(path)?;
        ckpt.check_feature_dim(feature_dim)?;
        Ok(ckpt)
    }

    pub fn check_feature_dim(&self, feature_dim: usize) -> Result<()> {
        if self.model.dims.feature_dim != feature_dim {
            return Err(Error::ModelDims {
                what: "feature dimension d",
                checkpoint: self.model.dims.feature_dim,
                data: feature_dim,
            });
        }
        Ok(())
    }
}
