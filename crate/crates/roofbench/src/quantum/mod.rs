//! Operator bases, state-space coefficient geometry, and roof-based
//! entanglement measures.
//!
//! Density operators on C^D embed as real coefficient vectors over an
//! orthonormal hermitian operator basis; pure states form a compact real
//! variety in that coefficient space (the Poincare sphere for D = 2). The
//! polynomial measures f_a are concave on states and vanish exactly on the
//! pure reduced states of product vectors, so the entanglement of formation
//! is the convex roof of a polynomial over the pure-state variety: precisely
//! the problem solved by [`crate::roof`].

pub mod basis;
pub mod eof;
pub mod measure;
pub mod state;

pub use basis::{
    adjoint_representation, gellmann, tensor_product, Convention, OperatorBasis,
    StructureTensors,
};
pub use eof::{
    entanglement_of_formation, hjw_ensemble, random_right_unitary, Ensemble, EofOptions,
    EofResult, EofStrategy,
};
pub use measure::{measure_f_a, measure_f_a_pure, measure_polynomial};
pub use state::{
    angle, pure_state_variety, purity_conditions, reduced_coefficient_vector,
    support_restricted_variety, CoefficientVector, DensityMatrix, PurityReport, SupportSlice,
    Subsystem,
};

use thiserror::Error;

use crate::poly::PolyError;
use crate::roof::RoofError;
use crate::variety::VarietyError;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Variety(#[from] VarietyError),
    #[error(transparent)]
    Roof(#[from] RoofError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("basis dimension must be at least 2, got {got}")]
    DimensionTooSmall { got: usize },
    #[error("matrix is not hermitian: asymmetry {residual:.3e}")]
    NotHermitian { residual: f64 },
    #[error("matrix is not a density operator: {reason}")]
    NotDensity { reason: String },
    #[error("matrix is not unitary: residual {residual:.3e}")]
    NotUnitary { residual: f64 },
    #[error("matrix is not orthogonal: residual {residual:.3e}")]
    NotOrthogonal { residual: f64 },
    #[error("state is not pure: residual {residual:.3e}")]
    NotPure { residual: f64 },
    #[error("coefficient vectors use different bases")]
    BasisMismatch,
    #[error("operation needs the {expected:?} convention, got {got:?}")]
    Convention { expected: basis::Convention, got: basis::Convention },
    #[error("measure order must be at least 2, got {got}")]
    MeasureOrder { got: u32 },
    #[error("total dimension {got} exceeds the supported scale {cap}")]
    UnsupportedScale { got: usize, cap: usize },
    #[error("ensemble does not reconstruct the state: residual {residual:.3e}")]
    Reconstruction { residual: f64 },
}
