//! Convex and concave roof constructions over compact real varieties.
//!
//! A variety `V = Z(l_0, ..., l_a)` in R^n carries a polynomial function `f`.
//! The convex roof of `f` is the pointwise-largest convex function on the hull
//! of `V` that agrees with `f` on `V`; equivalently, at a target `r` it is the
//! cheapest convex mixture `sum_j p_j f(x_j)` over decompositions of `r` into
//! points `x_j` of `V`. The concave roof is the mirror notion.
//!
//! The crate provides two independent routes to a roof value:
//!
//! * [`roof`] evaluates roofs directly by seeded multi-start constrained
//!   minimization over decompositions (the oracle route), and
//! * [`tangency`] solves the multi-tangent hyperplane conditions on the graph
//!   of `f` over `V` (the certificate route), producing machine-checkable
//!   [`tangency::TangencyCertificate`]s.
//!
//! Supporting layers: [`poly`] (sparse multivariate polynomials), [`variety`]
//! (membership, Jacobians, tangent frames), and [`quantum`] (Hermitian
//! operator bases, state-space coefficient embeddings, and entanglement
//! measures whose defining optimization is exactly a convex roof).
#![forbid(unsafe_code)]

pub mod poly;
pub mod quantum;
pub mod roof;
pub mod tangency;
pub mod variety;

pub use poly::{PolyError, Polynomial};
pub use quantum::{DensityMatrix, OperatorBasis, QuantumError};
pub use roof::{Decomposition, OracleOptions, RoofError, RoofProblem, RoofSense, RoofValue};
pub use tangency::{RMatrix, TangencyCertificate, TangencyError};
pub use variety::{TangentFrame, Variety, VarietyError};
