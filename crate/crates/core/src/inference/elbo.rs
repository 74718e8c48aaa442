//! The variational lower bound.
//!
//! `E_q[ln p(O, H)] − E_q[ln q(H)]` for the joint model under the mean-field
//! factorisation into Dirichlet appearance, Dirichlet topic proportions,
//! Normal-Wishart locations and categorical token topics. Clamped-off topics
//! (α = 0) are outside the support of both `p(θ_j)` and `q(θ_j)` and drop out.

use crate::corpus::{Corpus, ImageRecord};
use crate::parallel::Execution;
use crate::special::{digamma_unchecked, ln_beta};

use super::location::ExpectedGaussian;
use super::{AlphaVector, ExpectedLogAppearance, ImagePosterior, Model, TopicWordTable};

/// Appearance factors: `Σ_kf E[ln Dir(π|π⁰)] − E[ln Dir(π|π̃)]`.
pub fn appearance_elbo(
    prior: &TopicWordTable,
    posterior: &TopicWordTable,
    expected: &ExpectedLogAppearance,
) -> f64 {
    let mut total = 0.0;
    for f in 0..prior.vocab_sizes().len() {
        for k in 0..prior.num_topics() {
            let p0 = prior.row(k, f);
            let p = posterior.row(k, f);
            total += ln_beta(p) - ln_beta(p0);
            for (v, (a0, a)) in p0.iter().zip(p).enumerate() {
                total += (a0 - a) * expected.get(k, f, v);
            }
        }
    }
    total
}

/// Everything that belongs to one image: topic proportions, token topics,
/// word and location likelihoods and the location KL terms.
pub fn image_elbo(
    image: &ImageRecord,
    alpha: &AlphaVector,
    posterior: &ImagePosterior,
    model: &Model,
    expected: &ExpectedLogAppearance,
) -> f64 {
    let cfg = &model.config;
    let kfg = cfg.num_fg_topics();
    let active: Vec<usize> = (0..cfg.num_topics())
        .filter(|&k| alpha.is_active(k))
        .collect();
    let theta = &posterior.theta;

    let alpha_a: Vec<f64> = active.iter().map(|&k| alpha.0[k]).collect();
    let theta_a: Vec<f64> = active.iter().map(|&k| theta[k]).collect();
    let psi_sum = digamma_unchecked(theta_a.iter().sum());
    let mut elog_theta = vec![0.0; cfg.num_topics()];
    for &k in &active {
        elog_theta[k] = digamma_unchecked(theta[k]) - psi_sum;
    }
    let mut total = ln_beta(&theta_a) - ln_beta(&alpha_a);
    for &k in &active {
        total += (alpha.0[k] - theta[k]) * elog_theta[k];
    }

    let gaussians: Vec<Option<ExpectedGaussian>> = (0..kfg)
        .map(|k| {
            alpha
                .is_active(k)
                .then(|| ExpectedGaussian::new(&posterior.locations[k]))
        })
        .collect();
    for (i, token) in image.tokens.iter().enumerate() {
        let row = posterior.responsibilities.row(i);
        for &k in &active {
            let r = row[k];
            if r <= 0.0 {
                continue;
            }
            let location = match gaussians.get(k) {
                Some(Some(g)) => g.log_density(token.location),
                _ => 0.0,
            };
            total +=
                r * (elog_theta[k] + expected.token_score(k, &token.words) + location - r.ln());
        }
    }

    for &k in active.iter().filter(|&&k| k < kfg) {
        total -= posterior.locations[k].kl_divergence(&model.location_prior[k]);
    }
    total
}

/// Full bound; per-image terms are summed in image order.
pub fn compute_elbo(
    corpus: &Corpus,
    model: &Model,
    alphas: &[AlphaVector],
    posteriors: &[ImagePosterior],
    execution: Execution,
) -> f64 {
    let expected = ExpectedLogAppearance::new(&model.appearance_posterior);
    let per_image = execution.map_range(corpus.images.len(), |j| {
        image_elbo(
            &corpus.images[j],
            &alphas[j],
            &posteriors[j],
            model,
            &expected,
        )
    });
    appearance_elbo(
        &model.appearance_prior,
        &model.appearance_posterior,
        &expected,
    ) + per_image.iter().sum::<f64>()
}
