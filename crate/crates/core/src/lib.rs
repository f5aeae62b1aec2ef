//! Multiobjective travelling salesman solver: weighted-sum decomposition into
//! scalar subproblems, each solved by an attention-model policy trained with
//! REINFORCE against a learned critic baseline. The resulting models are
//! rolled out greedily to approximate the Pareto front, which is scored by
//! the two-objective hypervolume.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod instances;
pub mod model;
pub mod rng;
pub mod run;
pub mod trainer;

pub use error::{Error, Result};
