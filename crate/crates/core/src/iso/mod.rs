//! Graph isomorphic layer: learnable sub-graph templates matched against
//! every window of the adjacency matrix.

pub mod eigen;
mod layer;
pub mod matching;
pub mod perm;

pub use eigen::{sym_eigen, EigenPair};
pub use layer::{
    extract_features, grad_scores_wrt_templates, IsoFeatures, MatchMode, TemplateBank,
};
pub use matching::{match_bruteforce, match_spectral};
pub use perm::{enumerate_permutations, Permutation, MAX_BRUTEFORCE_K};
