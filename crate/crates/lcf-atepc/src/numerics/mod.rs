//! Minimal reverse-mode differentiation substrate: dense f64 matrices, the
//! op set the model needs, a named parameter store with a text checkpoint
//! format, and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod matrix;
mod params;

pub use gradcheck::{finite_difference_check, CoordCheck, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use matrix::Matrix;
pub use params::{CheckpointError, Param, ParameterStore, INIT_RANGE};
