//! Corpora sampled from the model's own generative process, with the latent
//! truth kept alongside as an oracle.
//!
//! Topic layout matches a [`ModelConfig`] with one topic per class:
//! foreground topic `c` belongs to class `c`, background topics follow.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`. Stream 0
//! draws the appearance distributions; image `j` draws everything else from
//! its own stream `j + 1`, so images can be sampled in parallel and any one
//! image is reproducible in isolation. Categorical draws invert the CDF of a
//! single uniform with a linear scan.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{default_class_names, Corpus, GroundTruthBox, ImageRecord, Token};
use crate::inference::{ImagePosterior, Model, ModelConfig, NormalWishart, TopicWordTable};
use crate::localise::{
    box_from_covariance, corloc, localise_image, BoundingBox, CorlocReport, Detection,
    HeatMapOptions, OverlapRule, Strategy,
};
use crate::parallel::Execution;
use crate::{Error, Result};

const MAX_LOCATION_TRIES: usize = 100;
/// Lower bound on Gamma shapes when resampling around a table with zeros.
const MIN_SHAPE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelDistribution {
    /// Each class present independently with probability `p`.
    Bernoulli { p: f64 },
    /// Exactly `count` distinct classes, uniformly chosen.
    Exactly { count: usize },
    /// Image `j` carries class `j mod C` only.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub num_bg_topics: usize,
    pub vocab_sizes: Vec<usize>,
    pub num_images: usize,
    pub tokens_per_image: usize,
    /// Symmetric Dirichlet concentration of foreground appearance rows.
    pub fg_concentration: f64,
    pub bg_concentration: f64,
    /// Entry of α for present foreground topics.
    pub fg_alpha: f64,
    pub bg_alpha: f64,
    /// Normal-Wishart from which each object's (μ, Λ) is drawn.
    pub location_prior: NormalWishart,
    pub labels: LabelDistribution,
    /// Image `j` keeps its labels iff `floor((j+1)·f) > floor(j·f)`; the rest
    /// are flagged unlabeled with their labels hidden.
    pub labelled_fraction: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 3,
            num_bg_topics: 2,
            vocab_sizes: vec![50],
            num_images: 200,
            tokens_per_image: 150,
            fg_concentration: 0.1,
            bg_concentration: 0.1,
            fg_alpha: 1.0,
            bg_alpha: 1.0,
            location_prior: NormalWishart {
                mean: Vector2::new(0.5, 0.5),
                scale: Matrix2::identity() * 10.0,
                beta: 0.25,
                nu: 10.0,
            },
            labels: LabelDistribution::Bernoulli { p: 0.5 },
            labelled_fraction: 1.0,
            image_width: 100,
            image_height: 100,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_topics(&self) -> usize {
        self.num_classes + self.num_bg_topics
    }

    /// Matching model configuration (one topic per class).
    pub fn model_config(&self) -> ModelConfig {
        let mut config = ModelConfig::new(
            self.num_classes,
            self.num_bg_topics,
            self.vocab_sizes.clone(),
        );
        config.seed = self.seed;
        config
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| {
            Err(Error::validation(
                format!("synth config field {field}"),
                msg,
            ))
        };
        if self.num_classes == 0 {
            return bad("num_classes", "must be at least 1");
        }
        if self.num_bg_topics == 0 {
            return bad("num_bg_topics", "must be at least 1");
        }
        if self.vocab_sizes.is_empty() || self.vocab_sizes.contains(&0) {
            return bad("vocab_sizes", "must be non-empty with positive entries");
        }
        if self.num_images == 0 || self.tokens_per_image == 0 {
            return bad("num_images/tokens_per_image", "must be positive");
        }
        for (name, v) in [
            ("fg_concentration", self.fg_concentration),
            ("bg_concentration", self.bg_concentration),
            ("fg_alpha", self.fg_alpha),
            ("bg_alpha", self.bg_alpha),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, "must be positive and finite");
            }
        }
        match self.labels {
            LabelDistribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                return bad("labels.p", "must lie in [0, 1]")
            }
            LabelDistribution::Exactly { count } if count > self.num_classes => {
                return bad("labels.count", "exceeds num_classes")
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.labelled_fraction) {
            return bad("labelled_fraction", "must lie in [0, 1]");
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image_width/image_height", "must be positive");
        }
        self.location_prior.validate()
    }

    fn is_labelled(&self, j: usize) -> bool {
        let f = self.labelled_fraction;
        ((j + 1) as f64 * f).floor() > (j as f64 * f).floor()
    }
}

/// A planted object: the true Gaussian of one class in one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedObject {
    pub class: usize,
    pub mean: [f64; 2],
    /// Σ = Λ⁻¹, row-major.
    pub covariance: [[f64; 2]; 2],
    /// 2σ box, normalised coordinates.
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub id: String,
    /// True classes, including those hidden on unlabeled images.
    pub labels: Vec<usize>,
    /// Topic proportions over all topics; zero off the image's support.
    pub theta: Vec<f64>,
    /// True topic of every token.
    pub topics: Vec<usize>,
    pub objects: Vec<PlantedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    pub num_classes: usize,
    pub num_bg_topics: usize,
    /// True word distributions, one probability row per topic and channel.
    pub appearance: TopicWordTable,
    pub images: Vec<ImageTruth>,
}

impl SynthGroundTruth {
    /// Planted boxes in pixel coordinates of the matching corpus images.
    pub fn ground_truth_boxes(&self, corpus: &Corpus) -> Vec<GroundTruthBox> {
        self.images
            .iter()
            .zip(&corpus.images)
            .flat_map(|(truth, image)| {
                truth.objects.iter().map(move |o| {
                    let b = o.bbox.to_pixels(image.width, image.height);
                    GroundTruthBox {
                        image_id: truth.id.clone(),
                        class_id: o.class,
                        x_min: b.x_min,
                        y_min: b.y_min,
                        x_max: b.x_max,
                        y_max: b.y_max,
                    }
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serialises")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SynthGroundTruth> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), e))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dirichlet draw by normalised Gammas. Underflow to an all-zero vector
/// (possible for tiny shapes) falls back to the largest-shape coordinate.
fn dirichlet(rng: &mut ChaCha8Rng, shapes: &[f64]) -> Vec<f64> {
    let mut draws: Vec<f64> = shapes
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        let best = (0..shapes.len())
            .max_by(|&a, &b| shapes[a].total_cmp(&shapes[b]).then(b.cmp(&a)))
            .unwrap();
        draws
            .iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = if i == best { 1.0 } else { 0.0 });
    }
    draws
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Wishart(W, ν) by the Bartlett decomposition.
fn wishart(rng: &mut ChaCha8Rng, scale: &Matrix2<f64>, nu: f64) -> Matrix2<f64> {
    let l = scale.cholesky().expect("scale is positive definite").l();
    let a11 = ChiSquared::new(nu).unwrap().sample(rng).sqrt();
    let a22 = ChiSquared::new(nu - 1.0).unwrap().sample(rng).sqrt();
    let a21: f64 = StandardNormal.sample(rng);
    let a = Matrix2::new(a11, 0.0, a21, a22);
    let la = l * a;
    let out = la * la.transpose();
    (out + out.transpose()) * 0.5
}

fn gaussian(rng: &mut ChaCha8Rng, mean: &Vector2<f64>, chol: &Matrix2<f64>) -> Vector2<f64> {
    let z = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
    mean + chol * z
}

/// Draw (μ, Λ) from a Normal-Wishart: Λ ~ W(W, ν), μ ~ N(m, (βΛ)⁻¹).
pub fn sample_normal_wishart(
    rng: &mut ChaCha8Rng,
    prior: &NormalWishart,
) -> (Vector2<f64>, Matrix2<f64>) {
    let precision = wishart(rng, &prior.scale, prior.nu);
    let cov = (precision * prior.beta)
        .try_inverse()
        .expect("Wishart draw is invertible");
    let chol = cov.cholesky().expect("covariance is positive definite").l();
    (gaussian(rng, &prior.mean, &chol), precision)
}

/// True appearance rows drawn from the config's symmetric Dirichlets.
pub fn sample_appearance(config: &SynthConfig) -> TopicWordTable {
    let mut rng = rng_for(config.seed, 0);
    let mut table = TopicWordTable::filled(config.num_topics(), &config.vocab_sizes, 0.0);
    for k in 0..config.num_topics() {
        let conc = if k < config.num_classes {
            config.fg_concentration
        } else {
            config.bg_concentration
        };
        for (f, &v) in config.vocab_sizes.iter().enumerate() {
            let row = dirichlet(&mut rng, &vec![conc; v]);
            table.row_mut(k, f).copy_from_slice(&row);
        }
    }
    table
}

/// Resample each row of `table` from `Dir(κ · row)`; larger κ stays closer.
pub fn perturb_appearance(table: &TopicWordTable, kappa: f64, seed: u64) -> TopicWordTable {
    let mut rng = rng_for(seed, 0);
    let mut out = table.clone();
    for k in 0..table.num_topics() {
        for f in 0..table.vocab_sizes().len() {
            let shapes: Vec<f64> = table
                .row(k, f)
                .iter()
                .map(|&p| (kappa * p).max(MIN_SHAPE))
                .collect();
            let row = dirichlet(&mut rng, &shapes);
            out.row_mut(k, f).copy_from_slice(&row);
        }
    }
    out
}

pub fn sample_corpus(config: &SynthConfig) -> Result<(Corpus, SynthGroundTruth)> {
    config.validate()?;
    let appearance = sample_appearance(config);
    sample_corpus_with_appearance(config, &appearance)
}

/// Sample images given fixed true appearance rows (which must be normalised).
pub fn sample_corpus_with_appearance(
    config: &SynthConfig,
    appearance: &TopicWordTable,
) -> Result<(Corpus, SynthGroundTruth)> {
    config.validate()?;
    appearance.check_shape(config.num_topics(), &config.vocab_sizes)?;
    let sampled =
        Execution::default().map_range(config.num_images, |j| sample_image(config, appearance, j));
    let mut corpus = Corpus::new(config.num_classes, config.vocab_sizes.clone());
    corpus.class_names = default_class_names(config.num_classes);
    let mut images = Vec::with_capacity(config.num_images);
    for (record, truth) in sampled {
        corpus.images.push(record);
        images.push(truth);
    }
    Ok((
        corpus,
        SynthGroundTruth {
            num_classes: config.num_classes,
            num_bg_topics: config.num_bg_topics,
            appearance: appearance.clone(),
            images,
        },
    ))
}

fn sample_labels(rng: &mut ChaCha8Rng, config: &SynthConfig, j: usize) -> Vec<usize> {
    match config.labels {
        LabelDistribution::RoundRobin => vec![j % config.num_classes],
        LabelDistribution::Bernoulli { p } => (0..config.num_classes)
            .filter(|_| rng.random::<f64>() < p)
            .collect(),
        LabelDistribution::Exactly { count } => {
            let mut pool: Vec<usize> = (0..config.num_classes).collect();
            let mut chosen = Vec::with_capacity(count);
            for _ in 0..count {
                chosen.push(pool.remove(rng.random_range(0..pool.len())));
            }
            chosen.sort_unstable();
            chosen
        }
    }
}

fn sample_image(
    config: &SynthConfig,
    appearance: &TopicWordTable,
    j: usize,
) -> (ImageRecord, ImageTruth) {
    let mut rng = rng_for(config.seed, j as u64 + 1);
    let c = config.num_classes;
    let labels = sample_labels(&mut rng, config, j);

    // θ over the present topics only.
    let support: Vec<usize> = labels
        .iter()
        .copied()
        .chain(c..config.num_topics())
        .collect();
    let shapes: Vec<f64> = support
        .iter()
        .map(|&k| {
            if k < c {
                config.fg_alpha
            } else {
                config.bg_alpha
            }
        })
        .collect();
    let mut theta = vec![0.0; config.num_topics()];
    for (&k, p) in support.iter().zip(dirichlet(&mut rng, &shapes)) {
        theta[k] = p;
    }

    let mut gaussians = Vec::with_capacity(labels.len());
    let mut objects = Vec::with_capacity(labels.len());
    for &class in &labels {
        let (mean, precision) = sample_normal_wishart(&mut rng, &config.location_prior);
        let cov = precision.try_inverse().expect("Wishart draw is invertible");
        let cov = (cov + cov.transpose()) * 0.5;
        objects.push(PlantedObject {
            class,
            mean: [mean.x, mean.y],
            covariance: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
            bbox: box_from_covariance(mean, cov, 1.0),
        });
        gaussians.push((
            class,
            mean,
            cov.cholesky().expect("covariance is positive definite").l(),
        ));
    }

    let mut tokens = Vec::with_capacity(config.tokens_per_image);
    let mut topics = Vec::with_capacity(config.tokens_per_image);
    for _ in 0..config.tokens_per_image {
        let y = categorical(&mut rng, &theta);
        let location = match gaussians.iter().find(|g| g.0 == y) {
            Some((_, mean, chol)) => {
                let mut x = gaussian(&mut rng, mean, chol);
                let mut tries = 1;
                while !(in_unit(x.x) && in_unit(x.y)) && tries < MAX_LOCATION_TRIES {
                    x = gaussian(&mut rng, mean, chol);
                    tries += 1;
                }
                [x.x.clamp(0.0, 1.0), x.y.clamp(0.0, 1.0)]
            }
            None => [rng.random::<f64>(), rng.random::<f64>()],
        };
        let words = (0..config.vocab_sizes.len())
            .map(|f| categorical(&mut rng, appearance.row(y, f)) as u32)
            .collect();
        tokens.push(Token::new(location, words));
        topics.push(y);
    }

    let id = format!("img{j:05}");
    let labelled = config.is_labelled(j);
    let record = ImageRecord {
        id: id.clone(),
        width: config.image_width,
        height: config.image_height,
        labels: if labelled {
            labels.iter().copied().collect()
        } else {
            Default::default()
        },
        unlabeled: !labelled,
        tokens,
    };
    let truth = ImageTruth {
        id,
        labels,
        theta,
        topics,
        objects,
    };
    (record, truth)
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    /// Fraction of tokens whose argmax topic matches the truth. Foreground
    /// topics match by class; all background topics count as one label.
    pub token_accuracy: f64,
    pub corloc: CorlocReport,
}

/// Gaussian-strategy detections for every planted object, pixel coordinates.
pub fn planted_detections(
    corpus: &Corpus,
    truth: &SynthGroundTruth,
    model: &Model,
    posteriors: &[ImagePosterior],
) -> Result<Vec<Detection>> {
    check_lengths(corpus, truth, posteriors)?;
    let mut out = Vec::new();
    for ((image, t), post) in corpus.images.iter().zip(&truth.images).zip(posteriors) {
        for o in &t.objects {
            let boxes = localise_image(
                model,
                post,
                image,
                Strategy::Gaussian,
                o.class,
                &HeatMapOptions::default(),
            )?;
            for b in boxes {
                out.push(Detection::new(
                    &image.id,
                    o.class,
                    &b.to_pixels(image.width, image.height),
                ));
            }
        }
    }
    Ok(out)
}

fn check_lengths(
    corpus: &Corpus,
    truth: &SynthGroundTruth,
    posteriors: &[ImagePosterior],
) -> Result<()> {
    if corpus.images.len() != truth.images.len() || corpus.images.len() != posteriors.len() {
        return Err(Error::Shape(format!(
            "{} images, {} truths, {} posteriors",
            corpus.images.len(),
            truth.images.len(),
            posteriors.len()
        )));
    }
    Ok(())
}

/// Token accuracy of `posteriors` against the planted topics.
pub fn token_accuracy(
    truth: &SynthGroundTruth,
    config: &ModelConfig,
    posteriors: &[ImagePosterior],
) -> f64 {
    let (mut correct, mut total) = (0usize, 0usize);
    for (t, post) in truth.images.iter().zip(posteriors) {
        for (&true_topic, predicted) in t.topics.iter().zip(post.responsibilities.argmax()) {
            let hit = if true_topic < truth.num_classes {
                config.class_of(predicted) == Some(true_topic)
            } else {
                !config.is_foreground(predicted)
            };
            correct += hit as usize;
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Token accuracy and Gaussian-strategy CorLoc against the planted boxes.
pub fn planted_recovery_report(
    corpus: &Corpus,
    truth: &SynthGroundTruth,
    model: &Model,
    posteriors: &[ImagePosterior],
) -> Result<RecoveryReport> {
    let detections = planted_detections(corpus, truth, model, posteriors)?;
    let gt = truth.ground_truth_boxes(corpus);
    Ok(RecoveryReport {
        token_accuracy: token_accuracy(truth, &model.config, posteriors),
        corloc: corloc(&detections, &gt, truth.num_classes, OverlapRule::Strict),
    })
}
