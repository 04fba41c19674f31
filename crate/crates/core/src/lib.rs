#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dispersion;
pub mod error;
pub mod functionals;
pub mod mesh;
pub mod network;
pub mod optimize;
pub mod scenario;
pub mod sparse;
pub mod traffic;
pub mod vtk;

pub use error::{Error, Result};
