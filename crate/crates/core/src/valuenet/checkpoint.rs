//! Network checkpoints in the shared binary layout (see `binfmt`); the JSON
//! header carries the architecture, and round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, NetworkParams, NormalizationMap};
use crate::binfmt;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RTVNET01";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub map: Option<NormalizationMap>,
    pub iteration: u64,
    pub system: String,
    /// Loss weight in effect when the checkpoint was written.
    pub lambda: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: Architecture,
    seed: u64,
    map: Option<NormalizationMap>,
    iteration: u64,
    system: String,
    lambda: Option<f64>,
    num_params: usize,
}

impl Checkpoint {
    pub fn new(params: NetworkParams, map: Option<NormalizationMap>, iteration: u64, system: impl Into<String>) -> Self {
        Self {
            params,
            map,
            iteration,
            system: system.into(),
            lambda: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            arch: self.params.arch.clone(),
            seed: self.params.seed,
            map: self.map.clone(),
            iteration: self.iteration,
            system: self.system.clone(),
            lambda: self.lambda,
            num_params: self.params.len(),
        };
        binfmt::encode(MAGIC, &header, self.params.as_slice())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, body): (Header, _) = binfmt::decode(MAGIC, bytes)?;
        let data = binfmt::read_f64s(body, header.num_params)?;
        let params = NetworkParams::from_flat(header.arch, header.seed, data)?;
        if let Some(map) = &header.map {
            if map.dim() + 1 != params.arch.input_dim {
                return Err(Error::Format("normalization map does not match network input".into()));
            }
        }
        Ok(Self {
            params,
            map: header.map,
            iteration: header.iteration,
            system: header.system,
            lambda: header.lambda,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binfmt::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
