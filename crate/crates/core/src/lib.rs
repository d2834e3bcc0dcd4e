pub mod agentsim;
pub mod baselines;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod neural;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
