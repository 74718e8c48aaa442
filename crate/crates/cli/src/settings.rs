//! TOML configuration files. Every key is optional; missing keys take the
//! library defaults and command-line flags override both.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use wsol::inference::{LocationTerm, ModelConfig, NormalWishart};
use wsol::localise::HeatMapOptions;
use wsol::priors::{PriorConfig, TransferOptions};

use crate::error::{CliError, CliResult};

/// Schema of `train`, `localise` and `transfer` configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub topics_per_class: usize,
    pub num_bg_topics: usize,
    pub iterations: usize,
    pub elbo_tolerance: f64,
    pub seed: u64,
    pub similarity_weight: f64,
    pub ssl_alpha: f64,
    pub location_term: LocationTerm,
    pub m_step_period: usize,
    pub location_prior: NormalWishart,
    pub prior: PriorConfig,
    pub transfer: TransferOptions,
    pub heatmap: HeatMapOptions,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let model = ModelConfig::default();
        TrainSettings {
            topics_per_class: model.topics_per_class,
            num_bg_topics: model.num_bg_topics,
            iterations: model.iterations,
            elbo_tolerance: model.elbo_tolerance,
            seed: model.seed,
            similarity_weight: model.similarity_weight,
            ssl_alpha: model.ssl_alpha,
            location_term: model.location_term,
            m_step_period: 5,
            location_prior: NormalWishart::default(),
            prior: PriorConfig::default(),
            transfer: TransferOptions::default(),
            heatmap: HeatMapOptions::default(),
        }
    }
}

impl TrainSettings {
    pub fn model_config(&self, num_classes: usize, vocab_sizes: Vec<usize>) -> ModelConfig {
        ModelConfig {
            num_classes,
            topics_per_class: self.topics_per_class,
            num_bg_topics: self.num_bg_topics,
            vocab_sizes,
            iterations: self.iterations,
            elbo_tolerance: self.elbo_tolerance,
            seed: self.seed,
            similarity_weight: self.similarity_weight,
            ssl_alpha: self.ssl_alpha,
            location_term: self.location_term,
        }
    }
}

/// Parse a TOML file, or return the defaults when `path` is `None`.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config file {}: {e}", path.display())))
}
