//! Lindblad master-equation generators and an RK4 integrator with step-halving refinement.

mod generator;
mod integrate;
mod sparse;

pub use generator::{Collapse, Drive, Envelope, LindbladGenerator};
pub use integrate::{dissipator_apply, evolve, rhs, steady_observable, StepControl, Trajectory};
