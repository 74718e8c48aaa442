//! Token-topic responsibilities and the topic-proportion update.

use serde::{Deserialize, Serialize};

use crate::corpus::ImageRecord;
use crate::special::digamma_unchecked;
use crate::{Error, Result};

use super::location::{ExpectedGaussian, StudentT};
use super::{AlphaVector, ExpectedLogAppearance, LocationTerm, ModelConfig, NormalWishart};

/// Row-stochastic `N_j × K` matrix of `q(y_ij = k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    num_topics: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn zeros(num_tokens: usize, num_topics: usize) -> Self {
        Responsibilities {
            num_topics,
            values: vec![0.0; num_tokens * num_topics],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let num_topics = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == num_topics));
        Responsibilities {
            num_topics,
            values: rows.concat(),
        }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn num_tokens(&self) -> usize {
        if self.num_topics == 0 {
            0
        } else {
            self.values.len() / self.num_topics
        }
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.values[token * self.num_topics..(token + 1) * self.num_topics]
    }

    pub fn row_mut(&mut self, token: usize) -> &mut [f64] {
        &mut self.values[token * self.num_topics..(token + 1) * self.num_topics]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.num_topics.max(1))
    }

    #[inline]
    pub fn get(&self, token: usize, topic: usize) -> f64 {
        self.values[token * self.num_topics + topic]
    }

    /// `Σ_i ỹ_ik` for every topic.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_topics];
        for row in self.rows() {
            for (s, r) in sums.iter_mut().zip(row) {
                *s += r;
            }
        }
        sums
    }

    /// Mass of a set of topics for one token.
    pub fn mass(&self, token: usize, topics: std::ops::Range<usize>) -> f64 {
        self.row(token)[topics].iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Responsibilities) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Index of the largest entry of each row; ties go to the lowest topic.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows()
            .map(|row| {
                let mut best = 0;
                for (k, &r) in row.iter().enumerate() {
                    if r > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// `θ̃_jk = α_jk + Σ_i ỹ_ijk`.
pub fn update_theta_stats(alpha: &AlphaVector, responsibilities: &Responsibilities) -> Vec<f64> {
    alpha
        .0
        .iter()
        .zip(responsibilities.column_sums())
        .map(|(a, s)| a + s)
        .collect()
}

enum Scorer {
    Masked,
    Background,
    StudentT(StudentT),
    Expected(ExpectedGaussian),
}

/// One responsibility update for every token of an image.
///
/// The unnormalised log-responsibility of topic `k` is the location term
/// (foreground: predictive or expected Gaussian log-likelihood; background:
/// log of the unit uniform density, i.e. 0), plus `Σ_f E[ln π_{k,f,x_f}]`,
/// plus `Ψ(θ̃_k)`. Topics with `α_k = 0` are set to exactly zero.
pub fn update_responsibilities(
    image: &ImageRecord,
    alpha: &AlphaVector,
    theta: &[f64],
    locations: &[NormalWishart],
    appearance: &ExpectedLogAppearance,
    config: &ModelConfig,
) -> Result<Responsibilities> {
    score(
        image,
        alpha,
        theta,
        digamma_unchecked,
        locations,
        appearance,
        config,
    )
}

/// Starting responsibilities: as [`update_responsibilities`] with `θ̃ = α`,
/// but the proportion term is `ln α_k` (log of the prior mean, up to a
/// constant) rather than `Ψ(α_k)`. Pair with
/// [`ExpectedLogAppearance::log_mean`] of the appearance prior.
pub fn initial_responsibilities(
    image: &ImageRecord,
    alpha: &AlphaVector,
    locations: &[NormalWishart],
    appearance: &ExpectedLogAppearance,
    config: &ModelConfig,
) -> Result<Responsibilities> {
    score(
        image,
        alpha,
        &alpha.0,
        f64::ln,
        locations,
        appearance,
        config,
    )
}

fn score(
    image: &ImageRecord,
    alpha: &AlphaVector,
    theta: &[f64],
    theta_term: fn(f64) -> f64,
    locations: &[NormalWishart],
    appearance: &ExpectedLogAppearance,
    config: &ModelConfig,
) -> Result<Responsibilities> {
    let k_total = config.num_topics();
    let kfg = config.num_fg_topics();
    if alpha.len() != k_total || theta.len() != k_total || locations.len() != kfg {
        return Err(Error::Shape(format!(
            "image {}: alpha/theta/locations have lengths {}/{}/{}, expected {k_total}/{k_total}/{kfg}",
            image.id,
            alpha.len(),
            theta.len(),
            locations.len()
        )));
    }
    let scorers: Vec<Scorer> = (0..k_total)
        .map(|k| {
            if !alpha.is_active(k) {
                Scorer::Masked
            } else if k >= kfg {
                Scorer::Background
            } else {
                match config.location_term {
                    LocationTerm::StudentT => Scorer::StudentT(StudentT::new(&locations[k])),
                    LocationTerm::ExpectedLog => {
                        Scorer::Expected(ExpectedGaussian::new(&locations[k]))
                    }
                }
            }
        })
        .collect();
    if scorers.iter().all(|s| matches!(s, Scorer::Masked)) {
        return Err(Error::Domain(format!(
            "image {}: every topic is masked",
            image.id
        )));
    }
    let psi_theta: Vec<f64> = theta
        .iter()
        .zip(&scorers)
        .map(|(&t, s)| {
            if matches!(s, Scorer::Masked) {
                0.0
            } else {
                theta_term(t)
            }
        })
        .collect();

    let mut out = Responsibilities::zeros(image.tokens.len(), k_total);
    for (i, token) in image.tokens.iter().enumerate() {
        let row = out.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for (k, scorer) in scorers.iter().enumerate() {
            let location = match scorer {
                Scorer::Masked => continue,
                Scorer::Background => 0.0,
                Scorer::StudentT(t) => t.log_density(token.location),
                Scorer::Expected(g) => g.log_density(token.location),
            };
            let logit = location + appearance.token_score(k, &token.words) + psi_theta[k];
            row[k] = logit;
            max = max.max(logit);
        }
        let mut total = 0.0;
        for (r, scorer) in row.iter_mut().zip(&scorers) {
            if matches!(scorer, Scorer::Masked) {
                *r = 0.0;
            } else {
                *r = (*r - max).exp();
                total += *r;
            }
        }
        row.iter_mut().for_each(|r| *r /= total);
    }
    Ok(out)
}
