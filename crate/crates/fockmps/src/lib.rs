//! Block-sparse matrix product states with exactly conserved particle number.
//!
//! The crate implements:
//!
//! - a dense Fock-space oracle ([`dense`]) used as ground truth at desk scale,
//! - plain matrix product states and operators ([`full`]): evaluation, strong
//!   Kronecker and mode core products, orthogonalization, TT-SVD, truncation,
//! - the block-sparse MPS format indexed by the particle count to the left of
//!   each bond ([`block`]), with inner products, orthogonalization, TT-SVD
//!   and rank truncation acting sector by sector,
//! - rank-compact matrix product operator constructions for one- and
//!   two-particle second-quantization operators ([`mpo`]),
//! - matrix-free symbolic operator programs that act directly on the blocks
//!   ([`sym`]),
//! - block-structure-preserving ground-state solvers ([`solve`]),
//! - a portable serialization container and a coefficient file format
//!   ([`io`]).
//!
//! All tensor machinery is generic over the real scalar type through the
//! [`Scalar`] trait; `f64` aliases are exported at the crate root.

pub mod block;
pub mod dense;
pub mod error;
pub mod full;
pub mod io;
pub mod mpo;
pub mod scalar;
pub mod solve;
pub mod sym;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` aliases for the central types.
pub type DenseTensor64 = dense::DenseTensor<f64>;
pub type DenseOperator64 = dense::DenseOperator<f64>;
pub type FullMps64 = full::FullMps<f64>;
pub type FullMpo64 = full::FullMpo<f64>;
pub type BlockMps64 = block::BlockMps<f64>;
pub type SymMpo64 = sym::SymMpo<f64>;

/// Concrete `f32` aliases.
pub type FullMps32 = full::FullMps<f32>;
pub type BlockMps32 = block::BlockMps<f32>;
