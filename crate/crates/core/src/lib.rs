//! Numerical laboratory for mollified isometric immersions of planar domains.

pub mod error;
pub mod fields;
pub mod mollify;
pub mod pipeline;
pub mod potential;
pub mod ruling;
pub mod shape;
pub mod surfaces;
pub mod weakdet;

pub use error::{FlatError, Result};
