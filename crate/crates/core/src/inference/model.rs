use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{AppearancePosterior, AppearancePrior, LocationPrior, ModelConfig};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The persisted, global part of a trained model.
///
/// `appearance_prior` is the prior in effect at the end of training (after
/// any similarity M-steps), so `appearance_posterior` always equals it plus
/// the expected word counts. Per-image posteriors are not stored; recompute
/// them with [`infer_image`](super::infer_image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format_version: u32,
    pub config: ModelConfig,
    pub class_names: Vec<String>,
    pub appearance_prior: AppearancePrior,
    pub appearance_posterior: AppearancePosterior,
    /// One prior per foreground topic.
    pub location_prior: Vec<LocationPrior>,
}

impl Model {
    /// A model that has seen no data: the posterior equals the prior.
    pub fn untrained(
        config: ModelConfig,
        class_names: Vec<String>,
        appearance_prior: AppearancePrior,
        location_prior: LocationPrior,
    ) -> Result<Model> {
        let model = Model {
            format_version: MODEL_FORMAT_VERSION,
            location_prior: vec![location_prior; config.num_fg_topics()],
            appearance_posterior: appearance_prior.clone(),
            appearance_prior,
            class_names,
            config,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let k = self.config.num_topics();
        self.appearance_prior
            .check_shape(k, &self.config.vocab_sizes)?;
        self.appearance_posterior
            .check_shape(k, &self.config.vocab_sizes)?;
        self.appearance_prior.check_proper()?;
        if self.class_names.len() != self.config.num_classes {
            return Err(Error::Shape(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.config.num_classes
            )));
        }
        if self.location_prior.len() != self.config.num_fg_topics() {
            return Err(Error::Shape(format!(
                "{} location priors for {} foreground topics",
                self.location_prior.len(),
                self.config.num_fg_topics()
            )));
        }
        for nw in &self.location_prior {
            nw.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::parse(1, "missing format_version"))? as u32;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let model: Model = serde_json::from_value(value).map_err(|e| Error::parse(1, e))?;
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Model::from_json(&text)
}
