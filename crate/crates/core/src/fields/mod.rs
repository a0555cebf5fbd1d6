//! Grid fields over a planar box, finite-difference calculus, test functions,
//! pairings, and Hoelder diagnostics.

mod calculus;
mod field;
pub mod fld1;
mod grid;
mod holder;
mod testfn;

pub use calculus::{curl2, d1, d2, div, grad, hess, Axis};
pub use field::{sym_eigenvalues, sym_spectral_norm, ScalarField, SymField, VectorField};
pub use grid::Grid2;
pub use holder::{holder_profile, little_holder_verdict, HolderProfile, HolderVerdict, EXACT_NODE_LIMIT};
pub use testfn::{pair, Battery, TestFunction, BATTERY_ORDER};

pub(crate) use field::bilinear_stencil;
