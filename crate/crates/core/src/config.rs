//! Run configuration files (TOML): a `[system]` block plus optional
//! `[network]`, `[schedule]`, `[grid]` and `[scenario]` blocks. Unknown keys
//! are rejected everywhere.
//!
//! ```toml
//! [system]
//! kind = "air3d"
//!
//! [network]
//! hidden_layers = 3
//! hidden_width = 128
//!
//! [schedule]
//! batch_size = 10000
//! pretrain_iters = 2000
//! curriculum_iters = 20000
//! seed = 0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rollout::{FilterPolicy, NominalControl};
use crate::systems::{Air3dParams, NarrowPassageParams, SystemSpec};
use crate::trainer::TrainSchedule;
use crate::valuenet::{self, Activation, Architecture, NetworkParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Air3d(Air3dParams),
    TwoVehicle(Air3dParams),
    ThreeVehicle(Air3dParams),
    NarrowPassage(NarrowPassageParams),
    ControlIntegrator,
    DisturbanceIntegrator,
    Stationary { dim: usize },
}

impl SystemConfig {
    pub fn build(&self) -> Result<SystemSpec> {
        let sys = match self {
            Self::Air3d(p) => SystemSpec::air3d(p.clone()),
            Self::TwoVehicle(p) => SystemSpec::two_vehicle(p.clone()),
            Self::ThreeVehicle(p) => SystemSpec::three_vehicle(p.clone()),
            Self::NarrowPassage(p) => SystemSpec::narrow_passage(p.clone()),
            Self::ControlIntegrator => SystemSpec::control_integrator(),
            Self::DisturbanceIntegrator => SystemSpec::disturbance_integrator(),
            Self::Stationary { dim } => SystemSpec::stationary(*dim),
        };
        sys.validate()?;
        Ok(sys)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Sine frequency (ignored by other activations).
    pub omega0: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            hidden_width: 512,
            activation: Activation::Sine,
            omega0: 30.0,
        }
    }
}

impl NetworkConfig {
    pub fn architecture(&self, state_dim: usize) -> Architecture {
        Architecture {
            activation: self.activation,
            ..Architecture::sine(state_dim + 1, self.hidden_layers, self.hidden_width, self.omega0)
        }
    }

    pub fn init(&self, state_dim: usize, seed: u64) -> Result<NetworkParams> {
        valuenet::init_with(self.architecture(state_dim), seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per state dimension.
    pub resolution: Vec<usize>,
    /// Times at which to emit snapshots.
    #[serde(default = "default_snapshots")]
    pub snapshots: Vec<f64>,
}

fn default_snapshots() -> Vec<f64> {
    vec![0.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub t0: f64,
    /// Initial states, one rollout each.
    pub starts: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
}

fn default_dt() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<NominalControl>,
    /// CSV table `t, u0, u1, ..`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_table: Option<PathBuf>,
}

impl FilterConfig {
    /// `base` is the directory that relative table paths resolve against.
    pub fn policy(&self, base: &Path) -> Result<FilterPolicy> {
        let nominal = match (&self.nominal, &self.nominal_table) {
            (Some(n), None) => n.clone(),
            (None, Some(path)) => {
                let file = std::fs::File::open(base.join(path))?;
                NominalControl::from_csv(std::io::BufReader::new(file))?
            }
            _ => return Err(Error::Config("filter needs exactly one of `nominal` or `nominal_table`".into())),
        };
        FilterPolicy::new(nominal, self.margin)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<TrainSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn schedule(&self) -> Result<&TrainSchedule> {
        self.schedule
            .as_ref()
            .ok_or_else(|| Error::Config("missing [schedule] block".into()))
    }

    pub fn grid(&self) -> Result<&GridConfig> {
        self.grid.as_ref().ok_or_else(|| Error::Config("missing [grid] block".into()))
    }

    pub fn scenario(&self) -> Result<&ScenarioConfig> {
        self.scenario
            .as_ref()
            .ok_or_else(|| Error::Config("missing [scenario] block".into()))
    }

    /// Copy with every default written out, as used for training.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if out.schedule.is_some() && out.network.is_none() {
            out.network = Some(NetworkConfig::default());
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// First eight hex digits of the SHA-256 of the resolved TOML.
    pub fn hash8(&self) -> Result<String> {
        Ok(sha256_hex(self.resolved().to_toml()?.as_bytes())[..8].to_string())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
