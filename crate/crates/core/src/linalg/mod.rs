//! Block-vector arithmetic and the norm-free linear operator abstraction.

mod map;
mod vector;

pub use map::{block_matrix_map, check_adjoint, LinearMap};
pub use vector::{BlockVector, Shape};
