//! Quantum state tomography with restricted Boltzmann machines.
//!
//! The crate trains RBMs on computational-basis measurement data using
//! contrastive divergence, persistent CD, parallel tempering, and
//! mode-assisted updates, and provides the exact targets, metrics, and
//! Markov-chain diagnostics used to evaluate them.

pub mod analysis;
pub mod bits;
pub mod error;
pub mod mode_solver;
pub mod rbm;
pub mod rng;
pub mod samplers;
pub mod states;
pub mod trainer;

pub use bits::BitVector;
pub use error::{QstError, Result};
pub use rbm::{ExactModelTable, ParamDelta, Rbm, ENUMERATION_CAP};
pub use states::{MeasurementDataset, OutcomeDistribution, TargetState};
pub use trainer::{train, SamplerKind, TrainConfig, TrainTrace};
