//! Variational message passing for the joint topic model.
//!
//! The factorised posterior holds a Dirichlet per topic and feature channel
//! over words (shared across images), and per image a Dirichlet over topic
//! proportions, a Normal-Wishart per foreground topic for the object's
//! location, and a categorical responsibility per token.

mod alpha;
mod appearance;
mod config;
mod elbo;
pub mod location;
mod model;
mod responsibilities;
mod train;

pub use crate::special::digamma;
pub use alpha::{make_alpha, AlphaVector};
pub use appearance::{
    accumulate_word_counts, similarity_m_step, update_appearance_stats, AppearancePosterior,
    AppearancePrior, ExpectedLogAppearance, TopicWordTable,
};
pub use config::{LocationTerm, ModelConfig};
pub use elbo::{appearance_elbo, compute_elbo, image_elbo};
pub use location::{update_nw_stats, LocationPrior, NormalWishart};
pub use model::{load_model, save_model, Model, MODEL_FORMAT_VERSION};
pub use responsibilities::{
    initial_responsibilities, update_responsibilities, update_theta_stats, Responsibilities,
};
pub use train::{
    infer_image, train, ImagePosterior, TrainOptions, TrainOutput, INFER_MAX_SWEEPS,
    INFER_TOLERANCE,
};
