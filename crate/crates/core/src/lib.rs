//! Joint Bayesian topic model for weakly supervised object localisation.
//!
//! Images are bags of visual words with 2-D locations. Every foreground
//! class owns one or more topics whose availability in an image is clamped
//! by the image's weak labels; a pool of background topics is shared by all
//! images. Inference is variational message passing over Dirichlet
//! appearance models, per-image Dirichlet topic proportions and per-image
//! Normal-Wishart object locations. Bounding boxes are read off the fitted
//! location posteriors or off per-class responsibility heat maps.
//!
//! Layout:
//!
//! * [`corpus`]: token bags, weak labels, codebooks, similarity matrices, ground truth.
//! * [`inference`]: the VMP engine, the variational bound and model persistence.
//! * [`priors`]: data-driven and transferred appearance priors.
//! * [`localise`]: boxes, heat maps, NMS and CorLoc.
//! * [`video`]: Kalman filtering and RTS smoothing of box tracks.
//! * [`synth`]: sampling corpora from the generative model with known ground truth.

pub mod corpus;
pub mod error;
pub mod inference;
pub mod localise;
pub mod parallel;
pub mod priors;
pub mod special;
pub mod synth;
pub mod video;

pub use error::{Error, Result};
