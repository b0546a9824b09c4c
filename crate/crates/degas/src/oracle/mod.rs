//! Independent validation tools: Monte-Carlo simulation of the exact
//! program semantics, 1-D adaptive quadrature, and a seeded random program
//! generator for property testing.

mod genprog;
mod mc;
mod quad;

pub use genprog::{gen_random_program, GeneratedProgram, RandomProgramSpec};
pub use mc::{mc_sample, simulate_dataset, McResult};
pub use quad::quad_integrate;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("no accepted samples (all runs rejected)")]
    NoAcceptedSamples,
    #[error("quadrature did not converge within the subdivision budget")]
    MaxSubdivisions,
    #[error("equality observe on a transformed continuous variable is not supported by the sampler")]
    UnsupportedObserve,
}
