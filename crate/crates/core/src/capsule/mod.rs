//! Primary capsules, dynamic routing, residual capsules and the
//! reconstruction decoder.

mod heads;
pub mod mlp;
mod primary;
mod routing;
mod squash;

pub use heads::{
    classify, combine_heads, reconstruct, residual_backward, residual_capsules, ResidualCache,
};
pub use mlp::{Activation, Dense, Mlp, MlpCache};
pub use primary::{
    build_primary_capsules, build_primary_capsules_with, Orientation, PrimaryCapsules,
    PAD_THRESHOLD,
};
pub use routing::{dynamic_routing, leaky_softmax, DigitCapsules, RoutingGrads};
pub use squash::{dot, norm, squash, squash_vjp};

/// Binary classification: negative and positive class capsules.
pub const NUM_CLASSES: usize = 2;
/// Hidden width of each residual MLP.
pub const RESIDUAL_HIDDEN: usize = 64;
/// Hidden widths of the reconstruction decoder.
pub const DECODER_HIDDEN: [usize; 2] = [128, 256];
