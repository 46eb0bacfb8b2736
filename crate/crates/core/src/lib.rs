//! Isomorphic capsule network for brain-graph classification.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`iso`] matches learnable `k x k` templates against every window of
//!    the adjacency matrix, keeping both the matching score and the optimal
//!    alignment (permutation) of each window.
//! 2. [`capsule`] turns score and alignment into primary capsules, routes
//!    them to one digit capsule per class, adds a residual branch fed by the
//!    score maps and decodes the class capsules back into an adjacency matrix.
//! 3. [`train`] optimizes margin plus reconstruction loss with Adam under
//!    stratified 3-fold cross-validation.
//! 4. [`data`] holds the graph types, the BGD text format and the synthetic
//!    orientation-discrimination generator.

pub mod capsule;
pub mod data;
pub mod error;
pub mod iso;
pub mod matrix;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Mat;
