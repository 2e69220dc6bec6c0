//! Renormalization toolkit for interval exchange maps.
//!
//! The crate implements the Rauzy-Veech induction and its Zorich acceleration
//! for standard interval exchange maps, the associated matrix cocycle and its
//! Lyapunov spectrum, limit shapes of Birkhoff sums built from an Oseledets
//! frame over the natural extension, and the Denjoy-style blow-up that turns a
//! typical genus >= 2 map into an affine interval exchange map with a
//! wandering interval.
//!
//! Two arithmetic backends are available behind the [`scalar::Scalar`] trait:
//! exact big rationals for the identities that must hold bit-for-bit, and a
//! double-double float (106-bit significand) for long cocycle statistics. A
//! run picks one backend and sticks with it; the types make mixing impossible.

pub mod combinatorics;
pub mod induction;
pub mod limitshape;
pub mod lyapunov;
pub mod scalar;
pub mod suspension;
pub mod wander;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
