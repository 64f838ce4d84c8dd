//! Monte Carlo and numerics for supercritical branching processes in a random
//! environment.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cramer;
pub mod environment;
pub mod error;
pub mod harness;
pub mod interp;
pub mod offspring;
pub mod parallel;
pub mod quad;
pub mod rng;
pub mod simulator;
pub mod special;
pub mod stats;
pub mod stein;
pub mod wlimit;

pub use environment::{
    AssumptionReport, Atom, Condition, CumulantSet, EnvironmentModel, EnvironmentSpec,
    GaussianIncrement, IncrementLaw,
};
pub use error::{BpreError, Result};
pub use offspring::{LawSpec, OffspringLaw};
pub use simulator::{SampleSet, SimConfig, TrajectorySample};
