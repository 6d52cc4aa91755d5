//! Exact transition probabilities for single- and multi-species asymmetric
//! simple exclusion on ℤ, from Bethe-ansatz contour integrals, together with
//! the oracles used to check them.

pub mod bethe;
pub mod error;
pub mod oracle;
pub mod permutations;
pub mod quadrature;
pub mod scalar;
pub mod simulate;
pub mod species;
pub mod transition;

pub use error::{AsepError, Result};
