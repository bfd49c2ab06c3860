//! Deterministic simulation of data-parallel SGD with top-K gradient
//! sparsification and per-node error feedback, plus the tooling to check
//! its constants and convergence bounds against measured runs.

pub mod analysis;
pub mod data;
pub mod engine;
pub mod error;
pub mod objectives;
pub mod rng;
pub mod vecmath;

pub use engine::{
    run, Compressor, ExecutionMode, LearningRateSchedule, RunConfig, Sampling, Simulator, StepRecord, Trace,
};
pub use error::{Error, Result};
pub use objectives::{LeastSquaresProblem, LogisticProblem, Objective, ProblemKind, SmoothNonconvexProblem};
pub use vecmath::{DenseVector, SparseVector};
