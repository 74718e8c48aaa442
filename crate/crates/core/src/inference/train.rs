//! Training sweeps and single-image inference.

use log::debug;

use crate::corpus::{Corpus, ImageRecord, SimilarityMatrix};
use crate::parallel::Execution;
use crate::{Error, Result};

use super::{
    compute_elbo, initial_responsibilities, make_alpha, similarity_m_step, update_appearance_stats,
    update_nw_stats, update_responsibilities, update_theta_stats, AlphaVector, AppearancePrior,
    ExpectedLogAppearance, LocationPrior, Model, ModelConfig, NormalWishart, Responsibilities,
};

/// Variational posterior of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePosterior {
    pub responsibilities: Responsibilities,
    pub theta: Vec<f64>,
    /// One Normal-Wishart per foreground topic.
    pub locations: Vec<NormalWishart>,
}

impl ImagePosterior {
    /// Total responsibility of a class, summed over its topics.
    pub fn class_mass(&self, config: &ModelConfig, class: usize) -> f64 {
        let sums = self.responsibilities.column_sums();
        sums[config.topics_of(class)].iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Enables the similarity-regularised prior update.
    pub similarity: Option<SimilarityMatrix>,
    pub m_step_period: usize,
    pub execution: Execution,
    /// Evaluate the bound after every sweep (needed when `elbo_tolerance > 0`).
    pub record_elbo: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            similarity: None,
            m_step_period: 5,
            execution: Execution::Parallel,
            record_elbo: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub alphas: Vec<AlphaVector>,
    pub posteriors: Vec<ImagePosterior>,
    /// ELBO after initialisation (entry 0) and after every sweep.
    pub elbo_trace: Vec<f64>,
}

fn check_image(image: &ImageRecord, config: &ModelConfig) -> Result<()> {
    for token in &image.tokens {
        if token.words.len() != config.vocab_sizes.len() {
            return Err(Error::Shape(format!(
                "image {}: token has {} channels, model expects {}",
                image.id,
                token.words.len(),
                config.vocab_sizes.len()
            )));
        }
        for (&w, &v) in token.words.iter().zip(&config.vocab_sizes) {
            if w as usize >= v {
                return Err(Error::Shape(format!(
                    "image {}: word id {w} exceeds the model vocabulary {v}",
                    image.id
                )));
            }
        }
    }
    Ok(())
}

/// One per-image block of updates: responsibilities, θ̃, then locations.
fn image_step(
    image: &ImageRecord,
    alpha: &AlphaVector,
    theta: &[f64],
    locations: &[NormalWishart],
    expected: &ExpectedLogAppearance,
    model: &Model,
) -> Result<ImagePosterior> {
    let config = &model.config;
    let responsibilities =
        update_responsibilities(image, alpha, theta, locations, expected, config)?;
    let theta = update_theta_stats(alpha, &responsibilities);
    let locations = (0..config.num_fg_topics())
        .map(|k| update_nw_stats(image, &responsibilities, &model.location_prior[k], k))
        .collect();
    Ok(ImagePosterior {
        responsibilities,
        theta,
        locations,
    })
}

/// Start from responsibilities scored against prior means (see
/// [`initial_responsibilities`]), then update θ̃ and locations from them.
fn initial_step(
    image: &ImageRecord,
    alpha: &AlphaVector,
    prior_log_mean: &ExpectedLogAppearance,
    model: &Model,
) -> Result<ImagePosterior> {
    let config = &model.config;
    let responsibilities =
        initial_responsibilities(image, alpha, &model.location_prior, prior_log_mean, config)?;
    let theta = update_theta_stats(alpha, &responsibilities);
    let locations = (0..config.num_fg_topics())
        .map(|k| update_nw_stats(image, &responsibilities, &model.location_prior[k], k))
        .collect();
    Ok(ImagePosterior {
        responsibilities,
        theta,
        locations,
    })
}

/// Fit the model by iterating the VMP updates for `config.iterations` sweeps.
///
/// Per sweep, every image updates its responsibilities, topic proportions
/// and location posteriors against the previous sweep's appearance
/// posterior; then the appearance posterior is rebuilt by an ordered
/// reduction over images, so the result does not depend on thread count.
pub fn train(
    corpus: &Corpus,
    config: &ModelConfig,
    appearance_prior: AppearancePrior,
    location_prior: LocationPrior,
    options: &TrainOptions,
) -> Result<TrainOutput> {
    config.validate()?;
    location_prior.validate()?;
    if corpus.vocab_sizes != config.vocab_sizes {
        return Err(Error::validation(
            "vocab_sizes",
            format!(
                "corpus has {:?}, config has {:?}",
                corpus.vocab_sizes, config.vocab_sizes
            ),
        ));
    }
    if corpus.num_classes != config.num_classes {
        return Err(Error::validation(
            "num_classes",
            format!(
                "corpus has {}, config has {}",
                corpus.num_classes, config.num_classes
            ),
        ));
    }
    if let Some(m) = &options.similarity {
        if m.size() != config.num_classes {
            return Err(Error::validation(
                "similarity",
                "matrix size differs from num_classes",
            ));
        }
        if options.m_step_period == 0 {
            return Err(Error::validation("m_step_period", "must be at least 1"));
        }
    }
    for image in &corpus.images {
        check_image(image, config)?;
    }

    let base_prior = appearance_prior.clone();
    let mut model = Model::untrained(
        config.clone(),
        corpus.class_names.clone(),
        appearance_prior,
        location_prior,
    )?;
    let exec = options.execution;
    let alphas: Vec<AlphaVector> = corpus
        .images
        .iter()
        .map(|im| make_alpha(im, config))
        .collect();
    let all_responsibilities = |posteriors: &[ImagePosterior]| -> Vec<Responsibilities> {
        posteriors
            .iter()
            .map(|p| p.responsibilities.clone())
            .collect()
    };

    let expected = ExpectedLogAppearance::log_mean(&model.appearance_prior);
    let mut posteriors: Vec<ImagePosterior> = exec
        .map_zip(&corpus.images, &alphas, |im, a| {
            initial_step(im, a, &expected, &model)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    model.appearance_posterior = update_appearance_stats(
        corpus,
        &all_responsibilities(&posteriors),
        &model.appearance_prior,
    );

    let track_elbo = options.record_elbo || config.elbo_tolerance > 0.0;
    let mut elbo_trace = Vec::with_capacity(config.iterations + 1);
    if track_elbo {
        elbo_trace.push(compute_elbo(corpus, &model, &alphas, &posteriors, exec));
    }

    for sweep in 1..=config.iterations {
        let expected = ExpectedLogAppearance::new(&model.appearance_posterior);
        posteriors = exec
            .map_range(corpus.images.len(), |j| {
                let prev = &posteriors[j];
                image_step(
                    &corpus.images[j],
                    &alphas[j],
                    &prev.theta,
                    &prev.locations,
                    &expected,
                    &model,
                )
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let responsibilities = all_responsibilities(&posteriors);
        if let Some(m) = options
            .similarity
            .as_ref()
            .filter(|_| sweep % options.m_step_period == 0)
        {
            model.appearance_prior = similarity_m_step(
                &base_prior,
                corpus,
                &responsibilities,
                m,
                config.similarity_weight,
                config,
            )?;
        }
        model.appearance_posterior =
            update_appearance_stats(corpus, &responsibilities, &model.appearance_prior);

        if track_elbo {
            let elbo = compute_elbo(corpus, &model, &alphas, &posteriors, exec);
            let prev = *elbo_trace.last().expect("trace has the initial entry");
            elbo_trace.push(elbo);
            debug!("sweep {sweep}: elbo {elbo:.6}");
            if config.elbo_tolerance > 0.0
                && (elbo - prev).abs() <= config.elbo_tolerance * elbo.abs()
            {
                break;
            }
        }
    }

    Ok(TrainOutput {
        model,
        alphas,
        posteriors,
        elbo_trace,
    })
}

pub const INFER_MAX_SWEEPS: usize = 50;
pub const INFER_TOLERANCE: f64 = 1e-6;

/// Posterior of one image with the appearance model held fixed.
///
/// Iterates responsibilities, θ̃ and locations until the largest change in
/// any responsibility drops below 1e-6 or 50 sweeps have run.
pub fn infer_image(
    model: &Model,
    image: &ImageRecord,
    alpha: &AlphaVector,
) -> Result<ImagePosterior> {
    check_image(image, &model.config)?;
    if alpha.len() != model.config.num_topics() {
        return Err(Error::Shape(format!(
            "alpha has {} entries, model has {} topics",
            alpha.len(),
            model.config.num_topics()
        )));
    }
    let expected = ExpectedLogAppearance::new(&model.appearance_posterior);
    let start = ExpectedLogAppearance::log_mean(&model.appearance_posterior);
    let mut posterior = initial_step(image, alpha, &start, model)?;
    for _ in 0..INFER_MAX_SWEEPS {
        let next = image_step(
            image,
            alpha,
            &posterior.theta,
            &posterior.locations,
            &expected,
            model,
        )?;
        let change = next
            .responsibilities
            .max_abs_diff(&posterior.responsibilities);
        posterior = next;
        if change < INFER_TOLERANCE {
            break;
        }
    }
    Ok(posterior)
}
