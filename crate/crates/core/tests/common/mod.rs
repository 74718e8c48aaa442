//! Shared scenarios and brute-force oracles for the integration tests and
//! the acceptance runner.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsol::corpus::{Corpus, GroundTruthBox, ImageRecord, SimilarityMatrix, Token};
use wsol::inference::{
    train, AlphaVector, AppearancePrior, ModelConfig, NormalWishart, Responsibilities,
    TopicWordTable, TrainOptions, TrainOutput,
};
use wsol::localise::{corloc, localise_image, Detection, HeatMapOptions, OverlapRule, Strategy};
use wsol::parallel::Execution;
use wsol::priors::{build_all_priors, export_posterior_as_prior, PriorConfig, TransferOptions};
use wsol::synth::{
    perturb_appearance, sample_appearance, sample_corpus, sample_corpus_with_appearance,
    LabelDistribution, SynthConfig, SynthGroundTruth,
};
use wsol::video::StateSpaceConfig;

pub fn fit(
    corpus: &Corpus,
    config: &ModelConfig,
    prior: AppearancePrior,
    similarity: Option<SimilarityMatrix>,
    execution: Execution,
) -> TrainOutput {
    train(
        corpus,
        config,
        prior,
        NormalWishart::default(),
        &TrainOptions {
            similarity,
            execution,
            record_elbo: false,
            ..Default::default()
        },
    )
    .expect("training succeeds")
}

pub fn data_driven(corpus: &Corpus, config: &ModelConfig) -> AppearancePrior {
    build_all_priors(corpus, config, &PriorConfig::default()).expect("prior builds")
}

/// CorLoc (percent) of Gaussian-strategy boxes against planted objects.
/// `class_map` pairs a model class with the planted class it should find;
/// only images with `keep(j)` are scored.
pub fn planted_corloc(
    corpus: &Corpus,
    truth: &SynthGroundTruth,
    out: &TrainOutput,
    class_map: &[(usize, usize)],
    keep: &dyn Fn(usize) -> bool,
) -> f64 {
    let mut detections = Vec::new();
    let mut ground_truth = Vec::new();
    for (j, (image, t)) in corpus.images.iter().zip(&truth.images).enumerate() {
        if !keep(j) {
            continue;
        }
        for object in &t.objects {
            for &(model_class, true_class) in class_map {
                if object.class != true_class {
                    continue;
                }
                let boxes = localise_image(
                    &out.model,
                    &out.posteriors[j],
                    image,
                    Strategy::Gaussian,
                    model_class,
                    &HeatMapOptions::default(),
                )
                .expect("localisation succeeds");
                detections.push(Detection::new(&image.id, true_class, &boxes[0]));
                ground_truth.push(GroundTruthBox {
                    image_id: image.id.clone(),
                    class_id: true_class,
                    x_min: object.bbox.x_min,
                    y_min: object.bbox.y_min,
                    x_max: object.bbox.x_max,
                    y_max: object.bbox.y_max,
                });
            }
        }
    }
    corloc(
        &detections,
        &ground_truth,
        truth.num_classes,
        OverlapRule::Strict,
    )
    .mean
}

pub fn identity_map(num_classes: usize) -> Vec<(usize, usize)> {
    (0..num_classes).map(|c| (c, c)).collect()
}

fn everything(_: usize) -> bool {
    true
}

/// Scenario used by the appearance-sharing comparisons: short images,
/// flatter appearance rows and more pronounced objects.
pub fn lean_config(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        tokens_per_image: 30,
        fg_concentration: 0.5,
        bg_concentration: 0.5,
        fg_alpha: 2.0,
        ..Default::default()
    }
}

pub fn recovery_config(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        fg_alpha: 5.0,
        ..Default::default()
    }
}

/// Joint C-class training against C independent one-class runs on images
/// that each contain exactly two classes. Returns (joint, independent).
pub fn explaining_away(seed: u64, num_images: usize) -> (f64, f64) {
    let sc = SynthConfig {
        num_images,
        labels: LabelDistribution::Exactly { count: 2 },
        ..recovery_config(seed)
    };
    let (corpus, truth) = sample_corpus(&sc).unwrap();
    let cfg = sc.model_config();
    let joint_out = fit(
        &corpus,
        &cfg,
        data_driven(&corpus, &cfg),
        None,
        Execution::Parallel,
    );
    let joint = planted_corloc(
        &corpus,
        &truth,
        &joint_out,
        &identity_map(sc.num_classes),
        &everything,
    );
    let mut independent = 0.0;
    for c in 0..sc.num_classes {
        let mut single = corpus.clone();
        single.num_classes = 1;
        single.class_names = vec![corpus.class_names[c].clone()];
        for image in &mut single.images {
            image.labels = if image.labels.contains(&c) {
                [0].into()
            } else {
                Default::default()
            };
        }
        let mut cfg1 = cfg.clone();
        cfg1.num_classes = 1;
        let out = fit(
            &single,
            &cfg1,
            data_driven(&single, &cfg1),
            None,
            Execution::Parallel,
        );
        // Only class c is evaluated, so the report mean is that class's CorLoc.
        independent += planted_corloc(&single, &truth, &out, &[(0, c)], &everything);
    }
    (joint, independent / sc.num_classes as f64)
}

/// Two classes whose appearance rows are correlated, `per_class` images each.
/// Returns CorLoc with `M = I` and with off-diagonal `off`.
pub fn similarity_pair(seed: u64, per_class: usize, off: f64) -> (f64, f64) {
    let sc = SynthConfig {
        num_classes: 2,
        num_images: 2 * per_class,
        labels: LabelDistribution::RoundRobin,
        ..lean_config(seed)
    };
    let mut appearance = sample_appearance(&sc);
    let v = sc.vocab_sizes[0];
    let mut base = TopicWordTable::filled(1, &[v], 0.0);
    base.row_mut(0, 0).copy_from_slice(appearance.row(0, 0));
    let sibling = perturb_appearance(&base, 200.0, seed + 100);
    appearance.row_mut(1, 0).copy_from_slice(sibling.row(0, 0));
    let (corpus, truth) = sample_corpus_with_appearance(&sc, &appearance).unwrap();
    let cfg = sc.model_config();
    let run = |m: SimilarityMatrix| {
        let out = fit(
            &corpus,
            &cfg,
            data_driven(&corpus, &cfg),
            Some(m),
            Execution::Parallel,
        );
        planted_corloc(&corpus, &truth, &out, &identity_map(2), &everything)
    };
    (
        run(SimilarityMatrix::identity(2)),
        run(SimilarityMatrix::uniform_off_diagonal(2, off).unwrap()),
    )
}

/// Source trained on 200 images; targets of each size drawn from a
/// Dirichlet-perturbed copy of the source appearance. Returns per target
/// size (target-only, transferred).
pub fn domain_transfer(seed: u64, target_sizes: &[usize]) -> Vec<(f64, f64)> {
    let src = SynthConfig {
        num_images: 200,
        ..lean_config(seed)
    };
    let (source_corpus, _) = sample_corpus(&src).unwrap();
    let cfg = src.model_config();
    let source = fit(
        &source_corpus,
        &cfg,
        data_driven(&source_corpus, &cfg),
        None,
        Execution::Parallel,
    );
    let target_appearance = perturb_appearance(&sample_appearance(&src), 200.0, seed + 1000);
    target_sizes
        .iter()
        .map(|&n| {
            let tgt = SynthConfig {
                seed: seed + 500,
                num_images: n,
                labels: LabelDistribution::RoundRobin,
                ..src.clone()
            };
            let (corpus, truth) = sample_corpus_with_appearance(&tgt, &target_appearance).unwrap();
            let map = identity_map(src.num_classes);
            let own = fit(
                &corpus,
                &cfg,
                data_driven(&corpus, &cfg),
                None,
                Execution::Parallel,
            );
            let prior = export_posterior_as_prior(
                &source.model,
                &cfg,
                &corpus.class_names,
                &TransferOptions::default(),
            )
            .unwrap();
            let transferred = fit(&corpus, &cfg, prior, None, Execution::Parallel);
            (
                planted_corloc(&corpus, &truth, &own, &map, &everything),
                planted_corloc(&corpus, &truth, &transferred, &map, &everything),
            )
        })
        .collect()
}

/// 10% labelled images alone, with the other 90% unlabeled, and fully
/// labelled. All three are scored on the same labelled 10%.
pub fn semi_supervised(seed: u64) -> (f64, f64, f64) {
    let sc = SynthConfig {
        seed,
        tokens_per_image: 50,
        fg_concentration: 0.5,
        bg_concentration: 0.5,
        fg_alpha: 2.0,
        labelled_fraction: 0.1,
        ..Default::default()
    };
    let (corpus, truth) = sample_corpus(&sc).unwrap();
    let full = sample_corpus(&SynthConfig {
        labelled_fraction: 1.0,
        ..sc.clone()
    })
    .unwrap()
    .0;
    let cfg = sc.model_config();
    let map = identity_map(sc.num_classes);
    let labelled: Vec<bool> = corpus.images.iter().map(|im| !im.unlabeled).collect();
    let keep = |j: usize| labelled[j];

    let only = corpus.filter(|im| !im.unlabeled);
    let only_truth = SynthGroundTruth {
        images: truth
            .images
            .iter()
            .zip(&labelled)
            .filter(|(_, &l)| l)
            .map(|(t, _)| t.clone())
            .collect(),
        ..truth.clone()
    };
    let a = fit(
        &only,
        &cfg,
        data_driven(&only, &cfg),
        None,
        Execution::Parallel,
    );
    let b = fit(
        &corpus,
        &cfg,
        data_driven(&corpus, &cfg),
        None,
        Execution::Parallel,
    );
    let c = fit(
        &full,
        &cfg,
        data_driven(&full, &cfg),
        None,
        Execution::Parallel,
    );
    (
        planted_corloc(&only, &only_truth, &a, &map, &everything),
        planted_corloc(&corpus, &truth, &b, &map, &keep),
        planted_corloc(&full, &truth, &c, &map, &keep),
    )
}

/// Random corpus within ≤ 10 images, ≤ 50 tokens and ≤ 6 topics, with a
/// matching model configuration.
pub fn random_small_problem(seed: u64) -> (Corpus, ModelConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = rng.random_range(1..=3);
    let topics_per_class = if num_classes <= 2 {
        rng.random_range(1..=2)
    } else {
        1
    };
    let max_bg = 6 - num_classes * topics_per_class;
    let num_bg = rng.random_range(1..=max_bg.min(3));
    let channels = rng.random_range(1..=2);
    let vocab: Vec<usize> = (0..channels).map(|_| rng.random_range(2..=8)).collect();
    let num_images = rng.random_range(1..=10);
    let per_image = 50 / num_images;
    let mut corpus = Corpus::new(num_classes, vocab.clone());
    for j in 0..num_images {
        let n = rng.random_range(1..=per_image.min(12));
        let tokens = (0..n)
            .map(|_| {
                Token::new(
                    [rng.random(), rng.random()],
                    vocab
                        .iter()
                        .map(|&v| rng.random_range(0..v) as u32)
                        .collect(),
                )
            })
            .collect();
        let unlabeled = rng.random::<f64>() < 0.2;
        let labels = if unlabeled {
            Default::default()
        } else {
            (0..num_classes)
                .filter(|_| rng.random::<f64>() < 0.6)
                .collect()
        };
        corpus.images.push(ImageRecord {
            id: format!("img{j}"),
            width: 64,
            height: 48,
            labels,
            unlabeled,
            tokens,
        });
    }
    let mut cfg = ModelConfig::new(num_classes, num_bg, vocab);
    cfg.topics_per_class = topics_per_class;
    cfg.iterations = rng.random_range(1..=4);
    cfg.seed = seed;
    (corpus, cfg)
}

/// `α + Σ_i ỹ_i` accumulated token by token for each topic.
pub fn theta_oracle(alpha: &AlphaVector, resp: &Responsibilities) -> Vec<f64> {
    (0..alpha.len())
        .map(|k| {
            let mut total = alpha.0[k];
            for i in 0..resp.num_tokens() {
                total += resp.get(i, k);
            }
            total
        })
        .collect()
}

/// `π⁰ + Σ_ij ỹ_ijk I(x_ijf = v)`, looping topic-major over the corpus.
pub fn appearance_oracle(
    corpus: &Corpus,
    resps: &[Responsibilities],
    prior: &TopicWordTable,
) -> TopicWordTable {
    let mut out = prior.clone();
    for f in 0..corpus.vocab_sizes.len() {
        for k in 0..prior.num_topics() {
            for v in 0..corpus.vocab_sizes[f] {
                let mut total = prior.get(k, f, v);
                for (image, resp) in corpus.images.iter().zip(resps) {
                    for (i, token) in image.tokens.iter().enumerate() {
                        if token.words[f] as usize == v {
                            total += resp.get(i, k);
                        }
                    }
                }
                out.row_mut(k, f)[v] = total;
            }
        }
    }
    out
}

/// Random row-stochastic responsibilities that are zero on masked topics.
pub fn random_responsibilities(
    rng: &mut ChaCha8Rng,
    num_tokens: usize,
    alpha: &AlphaVector,
) -> Responsibilities {
    let rows: Vec<Vec<f64>> = (0..num_tokens)
        .map(|_| {
            let raw: Vec<f64> = (0..alpha.len())
                .map(|k| {
                    if alpha.is_active(k) {
                        rng.random::<f64>() + 1e-3
                    } else {
                        0.0
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    Responsibilities::from_rows(&rows)
}

/// Marginal mean and covariance of every state given the observations at
/// frames `< upto`, by conditioning the dense joint Gaussian of all states.
pub fn dense_kalman_marginals(
    obs: &[Option<Vector2<f64>>],
    cfg: &StateSpaceConfig,
    upto: usize,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let len = obs.len();
    let n = 4 * len;
    let first = obs.iter().flatten().next().expect("one observation");
    let m0 = cfg
        .initial_mean
        .unwrap_or(Vector4::new(first.x, first.y, 0.0, 0.0));
    let a = DMatrix::from_column_slice(4, 4, cfg.transition.as_slice());
    let q = DMatrix::from_column_slice(4, 4, cfg.process_noise.as_slice());
    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    let mut m = DVector::from_column_slice(m0.as_slice());
    let mut p = DMatrix::from_column_slice(4, 4, cfg.initial_covariance.as_slice());
    let mut marginal = Vec::new();
    for t in 0..len {
        if t > 0 {
            m = &a * &m;
            p = &a * &p * a.transpose() + &q;
        }
        mean.rows_mut(4 * t, 4).copy_from(&m);
        marginal.push(p.clone());
    }
    // Cov(z_t, z_s) = A^(t−s) Cov(z_s) for t ≥ s.
    for s in 0..len {
        let mut block = marginal[s].clone();
        for t in s..len {
            cov.view_mut((4 * t, 4 * s), (4, 4)).copy_from(&block);
            cov.view_mut((4 * s, 4 * t), (4, 4))
                .copy_from(&block.transpose());
            block = &a * block;
        }
    }
    let observed: Vec<(usize, Vector2<f64>)> = obs
        .iter()
        .enumerate()
        .take(upto)
        .filter_map(|(t, o)| o.map(|o| (t, o)))
        .collect();
    let slice = |mean: &DVector<f64>, cov: &DMatrix<f64>| -> Vec<(DVector<f64>, DMatrix<f64>)> {
        (0..len)
            .map(|t| {
                (
                    mean.rows(4 * t, 4).into_owned(),
                    cov.view((4 * t, 4 * t), (4, 4)).into_owned(),
                )
            })
            .collect()
    };
    if observed.is_empty() {
        return slice(&mean, &cov);
    }
    let k = 2 * observed.len();
    let mut h = DMatrix::zeros(k, n);
    let mut y = DVector::zeros(k);
    let mut r = DMatrix::zeros(k, k);
    for (i, (t, o)) in observed.iter().enumerate() {
        for row in 0..2 {
            for col in 0..4 {
                h[(2 * i + row, 4 * t + col)] = cfg.observation[(row, col)];
            }
            y[2 * i + row] = o[row];
            for c in 0..2 {
                r[(2 * i + row, 2 * i + c)] = cfg.observation_noise[(row, c)];
            }
        }
    }
    let s = &h * &cov * h.transpose() + r;
    let gain = &cov * h.transpose() * s.try_inverse().expect("innovation invertible");
    let post_mean = &mean + &gain * (y - &h * &mean);
    let post_cov = &cov - &gain * &h * &cov;
    slice(&post_mean, &post_cov)
}

/// Random track of `len` frames along a noisy line with about 20% gaps,
/// plus a random constant-velocity configuration.
pub fn random_track(
    rng: &mut ChaCha8Rng,
    len: usize,
) -> (Vec<Option<Vector2<f64>>>, StateSpaceConfig) {
    let start = Vector2::new(rng.random::<f64>(), rng.random::<f64>());
    let velocity = Vector2::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 0.05;
    let mut obs: Vec<Option<Vector2<f64>>> = (0..len)
        .map(|t| {
            let keep = rng.random::<f64>() < 0.8;
            let noise = Vector2::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 0.02;
            keep.then(|| start + velocity * t as f64 + noise)
        })
        .collect();
    if obs.iter().all(Option::is_none) {
        obs[rng.random_range(0..len)] = Some(start);
    }
    let cfg = StateSpaceConfig::constant_velocity(
        10f64.powf(rng.random_range(-5.0..-2.0)),
        10f64.powf(rng.random_range(-4.0..-1.0)),
    );
    (obs, cfg)
}
