//! Appearance priors: uniform, data-driven from label statistics, and
//! transferred from a model trained on another domain.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Token};
use crate::inference::{AppearancePrior, Model, ModelConfig, TopicWordTable};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.01;
/// Half-width of the uniform jitter that separates a class's topics.
pub const TOPIC_PERTURBATION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    Uniform,
    #[default]
    DataDriven,
    /// Built by [`export_posterior_as_prior`], not by [`build_all_priors`].
    Transferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub epsilon: f64,
    pub mode: PriorMode,
    /// Divide the class-conditional histogram sum by C instead of by the
    /// number of images carrying the class.
    pub divide_by_num_classes: bool,
    /// Half-width of seeded uniform jitter added to background rows; 0 keeps
    /// them identical.
    pub bg_perturbation: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            epsilon: DEFAULT_EPSILON,
            mode: PriorMode::default(),
            divide_by_num_classes: false,
            bg_perturbation: 0.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation(
                "prior epsilon",
                "must be positive and finite",
            ));
        }
        if !(self.bg_perturbation.is_finite() && (0.0..1.0).contains(&self.bg_perturbation)) {
            return Err(Error::validation(
                "prior bg_perturbation",
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// L1-normalised word histogram of one channel; all zeros for no tokens.
pub fn histogram(tokens: &[Token], channel: usize, vocab_size: usize) -> Vec<f64> {
    let mut h = vec![0.0; vocab_size];
    for t in tokens {
        h[t.words[channel] as usize] += 1.0;
    }
    let n = tokens.len() as f64;
    if n > 0.0 {
        h.iter_mut().for_each(|x| *x /= n);
    }
    h
}

/// `|mean_{j ∋ k} h_j − mean_j h_j|₊ + ε`, entrywise. Unlabeled images enter
/// only the all-image mean.
pub fn data_driven_prior(
    corpus: &Corpus,
    class: usize,
    channel: usize,
    config: &PriorConfig,
) -> Result<Vec<f64>> {
    let v = corpus.vocab_sizes[channel];
    let mut sum_class = vec![0.0; v];
    let mut sum_all = vec![0.0; v];
    let mut with_class = 0usize;
    for image in &corpus.images {
        let h = histogram(&image.tokens, channel, v);
        let has = !image.unlabeled && image.labels.contains(&class);
        for (i, x) in h.into_iter().enumerate() {
            sum_all[i] += x;
            if has {
                sum_class[i] += x;
            }
        }
        with_class += has as usize;
    }
    if with_class == 0 {
        let name = corpus.class_names.get(class).map_or("?", String::as_str);
        return Err(Error::validation(
            "data-driven prior",
            format!("no labelled image contains class {class} ({name})"),
        ));
    }
    let class_denominator = if config.divide_by_num_classes {
        corpus.num_classes
    } else {
        with_class
    } as f64;
    let j = corpus.images.len() as f64;
    Ok(sum_class
        .iter()
        .zip(&sum_all)
        .map(|(&sc, &sa)| (sc / class_denominator - sa / j).max(0.0) + config.epsilon)
        .collect())
}

fn jitter(table: &mut TopicWordTable, topic: usize, half_width: f64, rng: &mut ChaCha8Rng) {
    for f in 0..table.vocab_sizes().len() {
        for x in table.row_mut(topic, f) {
            *x += rng.random_range(-half_width..=half_width);
        }
    }
}

/// Prior for every topic. Foreground rows come from `mode`; background rows
/// are 1. With several topics per class, each topic gets its class's row
/// plus seeded jitter of half-width [`TOPIC_PERTURBATION`].
pub fn build_all_priors(
    corpus: &Corpus,
    config: &ModelConfig,
    prior: &PriorConfig,
) -> Result<AppearancePrior> {
    prior.validate()?;
    config.validate()?;
    if corpus.vocab_sizes != config.vocab_sizes || corpus.num_classes != config.num_classes {
        return Err(Error::validation(
            "prior",
            "corpus and model configuration disagree on shape",
        ));
    }
    let mut table = TopicWordTable::filled(config.num_topics(), &config.vocab_sizes, 1.0);
    match prior.mode {
        PriorMode::Uniform => {}
        PriorMode::DataDriven => {
            for class in 0..config.num_classes {
                for f in 0..config.vocab_sizes.len() {
                    let row = data_driven_prior(corpus, class, f, prior)?;
                    for topic in config.topics_of(class) {
                        table.row_mut(topic, f).copy_from_slice(&row);
                    }
                }
            }
        }
        PriorMode::Transferred => {
            return Err(Error::validation(
                "prior mode",
                "a transferred prior needs a source model (see export_posterior_as_prior)",
            ))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if config.topics_per_class > 1 {
        for topic in 0..config.num_fg_topics() {
            jitter(&mut table, topic, TOPIC_PERTURBATION, &mut rng);
        }
    }
    if prior.bg_perturbation > 0.0 {
        for topic in config.num_fg_topics()..config.num_topics() {
            jitter(&mut table, topic, prior.bg_perturbation, &mut rng);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferOptions {
    /// Multiplier on the transferred pseudo-counts.
    pub tau: f64,
    /// `(source_name, target_name)` pairs; unmapped target classes match a
    /// source class of the same name.
    pub class_map: Vec<(String, String)>,
    /// Copy background rows by position; otherwise they reset to 1.
    pub transfer_background: bool,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            tau: 1.0,
            class_map: Vec::new(),
            transfer_background: true,
        }
    }
}

/// Target prior whose foreground rows are the source posterior of the
/// corresponding classes, times `tau`. Background rows beyond the source's
/// count, or all of them when background transfer is off, are 1.
pub fn export_posterior_as_prior(
    source: &Model,
    target: &ModelConfig,
    target_names: &[String],
    options: &TransferOptions,
) -> Result<AppearancePrior> {
    if !(options.tau.is_finite() && options.tau > 0.0) {
        return Err(Error::validation(
            "transfer tau",
            "must be positive and finite",
        ));
    }
    let src = &source.config;
    if src.vocab_sizes != target.vocab_sizes {
        return Err(Error::validation(
            "vocab_sizes",
            format!(
                "source model has {:?}, target has {:?}",
                src.vocab_sizes, target.vocab_sizes
            ),
        ));
    }
    if src.topics_per_class != target.topics_per_class {
        return Err(Error::validation(
            "topics_per_class",
            format!(
                "source model has {}, target has {}",
                src.topics_per_class, target.topics_per_class
            ),
        ));
    }
    if target_names.len() != target.num_classes {
        return Err(Error::validation(
            "class names",
            "target names do not match num_classes",
        ));
    }
    let renamed: HashMap<&str, &str> = options
        .class_map
        .iter()
        .map(|(s, t)| (t.as_str(), s.as_str()))
        .collect();
    let source_index: HashMap<&str, usize> = source
        .class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut matched = Vec::with_capacity(target_names.len());
    let mut unmatched = Vec::new();
    for name in target_names {
        let wanted = renamed.get(name.as_str()).copied().unwrap_or(name);
        match source_index.get(wanted) {
            Some(&i) => matched.push(i),
            None => unmatched.push(name.clone()),
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::validation(
            "class names",
            format!(
                "no source class for target classes: {}",
                unmatched.join(", ")
            ),
        ));
    }

    let posterior = &source.appearance_posterior;
    let mut table = TopicWordTable::filled(target.num_topics(), &target.vocab_sizes, 1.0);
    let copy = |table: &mut TopicWordTable, to: usize, from: usize| {
        for f in 0..target.vocab_sizes.len() {
            let row = table.row_mut(to, f);
            for (x, &s) in row.iter_mut().zip(posterior.row(from, f)) {
                *x = options.tau * s;
            }
        }
    };
    for (class, &src_class) in matched.iter().enumerate() {
        for (to, from) in target.topics_of(class).zip(src.topics_of(src_class)) {
            copy(&mut table, to, from);
        }
    }
    if options.transfer_background {
        for i in 0..target.num_bg_topics.min(src.num_bg_topics) {
            copy(
                &mut table,
                target.num_fg_topics() + i,
                src.num_fg_topics() + i,
            );
        }
    }
    Ok(table)
}

/// Two-column CSV `source_name,target_name`; a header row with exactly
/// those names is skipped.
pub fn load_class_map_csv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(i + 1, e))?;
        if record.len() != 2 {
            return Err(Error::parse(
                i + 1,
                format!("expected 2 columns, found {}", record.len()),
            ));
        }
        if i == 0 && &record[0] == "source_name" && &record[1] == "target_name" {
            continue;
        }
        out.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(out)
}
