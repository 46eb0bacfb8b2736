//! Losses, optimization, the cross-validation protocol and model files.

pub mod adam;
pub mod container;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod params;
pub mod trainer;

pub use adam::Adam;
pub use container::{format_model, load_model, parse_model, save_model, MAGIC};
pub use gradcheck::{
    check_gradients, gradient_check, GradCheckOptions, GradCheckReport, TensorCheck,
};
pub use loss::{margin_loss, reconstruction_loss, total_loss, LossTerms};
pub use model::{Ablation, Forward, Model, ModelConfig};
pub use params::{ModelParams, ParamSet, TensorSpec};
pub use trainer::{
    binary_scores, evaluate, train, EpochRecord, Evaluation, FoldReport, Metrics, RoutingStats,
    TrainConfig, TrainOutcome,
};
