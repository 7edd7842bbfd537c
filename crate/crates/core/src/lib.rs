pub mod analysis;
mod binfmt;
pub mod config;
pub mod error;
pub mod gridsolver;
pub mod rollout;
pub mod runs;
pub mod systems;
pub mod trainer;
pub mod valuenet;

pub use error::{Error, Result};
