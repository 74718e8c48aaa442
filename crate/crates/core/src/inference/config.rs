use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which location term scores foreground topics in the responsibility update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocationTerm {
    /// Log of the Student-t posterior predictive.
    StudentT,
    /// Expected Gaussian log-likelihood under the Normal-Wishart posterior.
    #[default]
    ExpectedLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub topics_per_class: usize,
    pub num_bg_topics: usize,
    pub vocab_sizes: Vec<usize>,
    pub iterations: usize,
    /// Stop early once the relative ELBO change falls below this; 0 runs all sweeps.
    pub elbo_tolerance: f64,
    pub seed: u64,
    pub similarity_weight: f64,
    pub ssl_alpha: f64,
    pub location_term: LocationTerm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 1,
            topics_per_class: 1,
            num_bg_topics: 20,
            vocab_sizes: Vec::new(),
            iterations: 100,
            elbo_tolerance: 0.0,
            seed: 0,
            similarity_weight: 1.0,
            ssl_alpha: 0.1,
            location_term: LocationTerm::default(),
        }
    }
}

impl ModelConfig {
    pub fn new(num_classes: usize, num_bg_topics: usize, vocab_sizes: Vec<usize>) -> Self {
        ModelConfig {
            num_classes,
            num_bg_topics,
            vocab_sizes,
            ..Default::default()
        }
    }

    pub fn num_fg_topics(&self) -> usize {
        self.num_classes * self.topics_per_class
    }

    pub fn num_topics(&self) -> usize {
        self.num_fg_topics() + self.num_bg_topics
    }

    pub fn is_foreground(&self, topic: usize) -> bool {
        topic < self.num_fg_topics()
    }

    /// Class owning a foreground topic.
    pub fn class_of(&self, topic: usize) -> Option<usize> {
        self.is_foreground(topic)
            .then(|| topic / self.topics_per_class)
    }

    pub fn topics_of(&self, class: usize) -> std::ops::Range<usize> {
        class * self.topics_per_class..(class + 1) * self.topics_per_class
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation("model config", m));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1");
        }
        if self.topics_per_class == 0 {
            return bad("topics_per_class must be at least 1");
        }
        if self.num_bg_topics == 0 {
            return bad("num_bg_topics must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.vocab_sizes.is_empty() || self.vocab_sizes.contains(&0) {
            return bad("vocab_sizes must be non-empty with positive entries");
        }
        if !(self.similarity_weight >= 0.0) {
            return bad("similarity_weight must be nonnegative");
        }
        if !(self.ssl_alpha > 0.0) {
            return bad("ssl_alpha must be positive");
        }
        if !(self.elbo_tolerance >= 0.0) {
            return bad("elbo_tolerance must be nonnegative");
        }
        Ok(())
    }
}
