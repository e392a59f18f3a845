//! Quantum dynamics in the trajectory picture.
//!
//! A state is a congruence of trajectories `q(a,t)` labelled by their initial
//! positions. The crate propagates the congruence with the quantum Newton law,
//! rebuilds the wavefunction from it, and checks the result against an
//! independent spectral solution of the Schrödinger equation.

pub mod diagnostics;
pub mod error;
pub mod eulerian;
pub mod lagrangian;
pub mod linalg;
pub mod model;
pub mod reconstruction;
pub mod runner;
pub mod stencil;

pub use error::{Error, Result};
pub use lagrangian::{DeformationState, EngineConfig};
pub use model::{
    GaussianStateSpec, LabelGrid, PhysicalSystem, PotentialSpec, PotentialTerm, SpatialGrid, TrajectoryField,
    WavefunctionField,
};
pub use stencil::Stencil;
