//! Combinatorial layer: permutation pairs, Rauzy operations and diagrams,
//! and the integer transition matrices carried by diagram paths.
//!
//! Everything downstream indexes vectors and matrices by *letters* of the
//! alphabet, never by positions: positions move under induction, letters do
//! not. The alphabet's declared order (first appearance in the top row) fixes
//! the indexing once and for all.

mod alphabet;
mod mat;
mod perm;
mod rauzy;

pub use alphabet::{Alphabet, Letter};
pub use mat::{IMat, RMat};
pub use perm::{is_irreducible, Omega, PermutationPair};
pub use rauzy::{
    affine_arrow_matrix, arrow_matrix, Arrow, ArrowKind, DiagramArrow, PathWord, RauzyDiagram,
};
