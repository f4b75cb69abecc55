//! In-context posterior estimation with conditional flow matching.

pub mod autodiff;
pub mod dataprep;
pub mod error;
pub mod flow;
pub mod infer;
pub mod metrics;
pub mod nn;
pub mod ode;
pub mod probmodels;
pub mod rng;
pub mod samples;
pub mod tensor;

pub use error::{Error, Result};
pub use ode::{SolverConfig, SolverStats};
pub use samples::SampleSet;
pub use probmodels::{ContextDataset, Family, LatentLayout, LatentVector, ScenarioConfig};
pub use tensor::{Matrix, Real, Tensor};
