//! Ground-truth conditional worlds: 2D and 1D Gaussian mixtures with exact
//! noised scores, and finite discrete problems with exact tables.

pub mod discrete;
pub mod gmm;
pub mod gmm1d;
pub mod mat2;

pub use discrete::{CondTable, DiscreteProblem};
pub use gmm::{Component, GaussianMixtureWorld, LabeledBatch};
pub use gmm1d::{Component1d, GaussianMixture1d};
