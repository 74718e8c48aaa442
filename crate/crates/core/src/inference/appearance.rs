//! Dirichlet appearance tables and their conjugate updates.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SimilarityMatrix};
use crate::special::digamma_unchecked;
use crate::{Error, Result};

use super::{ModelConfig, Responsibilities};

/// Per-topic, per-channel vectors over the vocabulary.
///
/// Stored channel-major; within a channel, rows are topics and columns are
/// word ids (row-major), so `channels[f][k * V_f + v]` is entry `(k, f, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWordTable {
    num_topics: usize,
    vocab_sizes: Vec<usize>,
    channels: Vec<Vec<f64>>,
}

/// Dirichlet pseudo-counts of the appearance prior.
pub type AppearancePrior = TopicWordTable;
/// Dirichlet pseudo-counts of the appearance posterior.
pub type AppearancePosterior = TopicWordTable;

impl TopicWordTable {
    pub fn filled(num_topics: usize, vocab_sizes: &[usize], value: f64) -> Self {
        TopicWordTable {
            num_topics,
            vocab_sizes: vocab_sizes.to_vec(),
            channels: vocab_sizes
                .iter()
                .map(|&v| vec![value; num_topics * v])
                .collect(),
        }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn row(&self, topic: usize, channel: usize) -> &[f64] {
        let v = self.vocab_sizes[channel];
        &self.channels[channel][topic * v..(topic + 1) * v]
    }

    pub fn row_mut(&mut self, topic: usize, channel: usize) -> &mut [f64] {
        let v = self.vocab_sizes[channel];
        &mut self.channels[channel][topic * v..(topic + 1) * v]
    }

    #[inline]
    pub fn get(&self, topic: usize, channel: usize, word: usize) -> f64 {
        self.channels[channel][topic * self.vocab_sizes[channel] + word]
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.channels.iter().flatten().copied()
    }

    pub fn scale(&mut self, factor: f64) {
        self.channels
            .iter_mut()
            .flatten()
            .for_each(|x| *x *= factor);
    }

    pub fn max_abs_diff(&self, other: &TopicWordTable) -> f64 {
        self.iter_values()
            .zip(other.iter_values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_shape(&self, num_topics: usize, vocab_sizes: &[usize]) -> Result<()> {
        if self.num_topics != num_topics || self.vocab_sizes != vocab_sizes {
            return Err(Error::Shape(format!(
                "appearance table is {} topics x {:?}, expected {} x {:?}",
                self.num_topics, self.vocab_sizes, num_topics, vocab_sizes
            )));
        }
        if self.channels.len() != vocab_sizes.len()
            || self
                .channels
                .iter()
                .zip(vocab_sizes)
                .any(|(c, &v)| c.len() != v * num_topics)
        {
            return Err(Error::Shape(
                "appearance table storage is inconsistent".into(),
            ));
        }
        Ok(())
    }

    /// Every entry finite and strictly positive (a proper Dirichlet).
    pub fn check_proper(&self) -> Result<()> {
        if self.iter_values().all(|x| x.is_finite() && x > 0.0) {
            Ok(())
        } else {
            Err(Error::validation(
                "appearance prior",
                "entries must be finite and > 0",
            ))
        }
    }
}

/// `Ψ(π̃_vkf) − Ψ(Σ_v π̃_vkf)`, the expected log word probability.
#[derive(Debug, Clone)]
pub struct ExpectedLogAppearance(TopicWordTable);

impl ExpectedLogAppearance {
    pub fn new(posterior: &TopicWordTable) -> Self {
        let mut table = posterior.clone();
        for f in 0..table.vocab_sizes.len() {
            for k in 0..table.num_topics {
                let row = table.row_mut(k, f);
                let total = digamma_unchecked(row.iter().sum());
                row.iter_mut()
                    .for_each(|x| *x = digamma_unchecked(*x) - total);
            }
        }
        ExpectedLogAppearance(table)
    }

    /// `ln(π̃_vkf / Σ_v π̃_vkf)`, the log of the expected word probability.
    pub fn log_mean(table: &TopicWordTable) -> Self {
        let mut table = table.clone();
        for f in 0..table.vocab_sizes.len() {
            for k in 0..table.num_topics {
                let row = table.row_mut(k, f);
                let total = row.iter().sum::<f64>().ln();
                row.iter_mut().for_each(|x| *x = x.ln() - total);
            }
        }
        ExpectedLogAppearance(table)
    }

    #[inline]
    pub fn get(&self, topic: usize, channel: usize, word: usize) -> f64 {
        self.0.get(topic, channel, word)
    }

    /// Summed over channels for one token.
    #[inline]
    pub fn token_score(&self, topic: usize, words: &[u32]) -> f64 {
        words
            .iter()
            .enumerate()
            .map(|(f, &w)| self.0.get(topic, f, w as usize))
            .sum()
    }
}

/// `Σ_ij I(x_ijf = v) ỹ_ijk` accumulated in image order.
pub fn accumulate_word_counts(
    corpus: &Corpus,
    responsibilities: &[Responsibilities],
    num_topics: usize,
) -> TopicWordTable {
    let mut counts = TopicWordTable::filled(num_topics, &corpus.vocab_sizes, 0.0);
    for (image, resp) in corpus.images.iter().zip(responsibilities) {
        for (i, token) in image.tokens.iter().enumerate() {
            let row = resp.row(i);
            for (f, &w) in token.words.iter().enumerate() {
                let v = corpus.vocab_sizes[f];
                let column = &mut counts.channels[f];
                for (k, &r) in row.iter().enumerate() {
                    if r != 0.0 {
                        column[k * v + w as usize] += r;
                    }
                }
            }
        }
    }
    counts
}

/// Conjugate Dirichlet update: prior pseudo-counts plus expected word counts.
pub fn update_appearance_stats(
    corpus: &Corpus,
    responsibilities: &[Responsibilities],
    prior: &AppearancePrior,
) -> AppearancePosterior {
    let mut posterior = accumulate_word_counts(corpus, responsibilities, prior.num_topics);
    for (p, q) in posterior.channels.iter_mut().zip(&prior.channels) {
        for (a, b) in p.iter_mut().zip(q) {
            *a += b;
        }
    }
    posterior
}

/// Similarity-regularised prior update for foreground topics.
///
/// Every foreground topic `k` receives the expected word counts of all
/// foreground topics `k'`, weighted by `weight * M[class(k), class(k')]`, on
/// top of the fixed base prior; background rows are copied unchanged.
pub fn similarity_m_step(
    base_prior: &AppearancePrior,
    corpus: &Corpus,
    responsibilities: &[Responsibilities],
    similarity: &SimilarityMatrix,
    weight: f64,
    config: &ModelConfig,
) -> Result<AppearancePrior> {
    if similarity.size() != config.num_classes {
        return Err(Error::Shape(format!(
            "similarity matrix is {0}x{0}, model has {1} classes",
            similarity.size(),
            config.num_classes
        )));
    }
    let counts = accumulate_word_counts(corpus, responsibilities, base_prior.num_topics);
    let mut updated = base_prior.clone();
    let kfg = config.num_fg_topics();
    for f in 0..corpus.vocab_sizes.len() {
        for k in 0..kfg {
            let ck = k / config.topics_per_class;
            for k2 in 0..kfg {
                let m = similarity.get(ck, k2 / config.topics_per_class) * weight;
                if m == 0.0 {
                    continue;
                }
                let source = counts.row(k2, f).to_vec();
                for (dst, src) in updated.row_mut(k, f).iter_mut().zip(source) {
                    *dst += m * src;
                }
            }
        }
    }
    Ok(updated)
}
