use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;

use wsol::corpus::{
    load_corpus, load_ground_truth_csv, load_similarity_matrix, save_corpus, save_ground_truth_csv,
    Corpus, ImageRecord,
};
use wsol::inference::{
    infer_image, load_model, make_alpha, save_model, train, AppearancePrior, ImagePosterior, Model,
    ModelConfig, TopicWordTable, TrainOptions,
};
use wsol::localise::{
    corloc, heat_map, load_detections_csv, localise_image, save_detections_csv, Detection,
    HeatMapOptions, OverlapRule, Strategy,
};
use wsol::parallel::Execution;
use wsol::priors::{
    build_all_priors, export_posterior_as_prior, load_class_map_csv, PriorMode, TransferOptions,
};
use wsol::synth::{sample_corpus, SynthConfig};
use wsol::video::{load_track_csv, save_smoothed_csv, smooth_track, StateSpaceConfig, TrackFrame};

use crate::error::{runtime, CliError, CliResult};
use crate::manifest::{sidecar, ManifestBuilder};
use crate::settings::{load_or_default, TrainSettings};
use crate::{
    Cli, Command, EvaluateArgs, LocaliseArgs, ModelFlags, RuleArg, SmoothArgs, StrategyArg,
    SynthArgs, TrainArgs, TransferArgs,
};

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Localise(a) => localise(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Transfer(a) => transfer(a),
        Command::Smooth(a) => smooth(a),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(dir.display(), e))
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("synth");
    manifest.input("config", &args.config);
    let mut config: SynthConfig = load_or_default(Some(&args.config))?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.num_images {
        config.num_images = n;
    }
    if let Some(n) = args.tokens_per_image {
        config.tokens_per_image = n;
    }
    if let Some(c) = args.num_classes {
        config.num_classes = c;
    }
    let (corpus, truth) = sample_corpus(&config)?;
    create_dir(&args.out_dir)?;
    let corpus_path = args.out_dir.join("corpus.txt");
    let truth_path = args.out_dir.join("truth.json");
    let boxes_path = args.out_dir.join("ground_truth.csv");
    save_corpus(&corpus, &corpus_path)?;
    truth.save(&truth_path)?;
    save_ground_truth_csv(&truth.ground_truth_boxes(&corpus), &boxes_path)?;
    manifest
        .output("corpus", &corpus_path)
        .output("truth", &truth_path)
        .output("ground_truth", &boxes_path);
    manifest.finish(
        &config,
        Some(config.seed),
        &args.out_dir.join("manifest.json"),
    )?;
    info!(
        "sampled {} images with {} tokens",
        corpus.images.len(),
        corpus.num_tokens()
    );
    Ok(())
}

fn apply_flags(flags: &ModelFlags, s: &mut TrainSettings) {
    if let Some(v) = flags.seed {
        s.seed = v;
    }
    if let Some(v) = flags.iterations {
        s.iterations = v;
    }
    if let Some(v) = flags.num_bg_topics {
        s.num_bg_topics = v;
    }
    if let Some(v) = flags.topics_per_class {
        s.topics_per_class = v;
    }
    if let Some(v) = flags.ssl_alpha {
        s.ssl_alpha = v;
    }
    if let Some(v) = flags.similarity_weight {
        s.similarity_weight = v;
    }
    if let Some(v) = flags.tau {
        s.transfer.tau = v;
    }
}

fn settings_from(flags: &ModelFlags) -> CliResult<TrainSettings> {
    let mut s: TrainSettings = load_or_default(flags.config.as_deref())?;
    apply_flags(flags, &mut s);
    Ok(s)
}

fn transfer_options(
    settings: &TrainSettings,
    class_map: Option<&Path>,
    no_background: bool,
) -> CliResult<TransferOptions> {
    let mut opts = settings.transfer.clone();
    if let Some(path) = class_map {
        opts.class_map = load_class_map_csv(path)?;
    }
    if no_background {
        opts.transfer_background = false;
    }
    Ok(opts)
}

/// A file passed as `--prior` is either a trained model (exported through
/// the transfer rule) or a bare prior table.
fn prior_from_file(
    path: &Path,
    config: &ModelConfig,
    corpus: &Corpus,
    options: &TransferOptions,
) -> CliResult<AppearancePrior> {
    let text = fs::read_to_string(path).map_err(|e| runtime(path.display(), e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("prior file {}: {e}", path.display())))?;
    if value.get("format_version").is_some() {
        let source = Model::from_json(&text)?;
        return Ok(export_posterior_as_prior(
            &source,
            config,
            &corpus.class_names,
            options,
        )?);
    }
    let table: TopicWordTable = serde_json::from_value(value)
        .map_err(|e| CliError::Validation(format!("prior file {}: {e}", path.display())))?;
    table.check_shape(config.num_topics(), &config.vocab_sizes)?;
    table.check_proper()?;
    Ok(table)
}

/// Boxes in pixel coordinates for the given classes of one image.
fn detections_for(
    model: &Model,
    posterior: &ImagePosterior,
    image: &ImageRecord,
    classes: impl Iterator<Item = usize>,
    strategy: Strategy,
    heat: &HeatMapOptions,
) -> CliResult<Vec<Detection>> {
    let mut out = Vec::new();
    for class in classes {
        for b in localise_image(model, posterior, image, strategy, class, heat)? {
            out.push(Detection::new(
                &image.id,
                class,
                &b.to_pixels(image.width, image.height),
            ));
        }
    }
    Ok(out)
}

fn write_elbo_csv(trace: &[f64], path: &Path) -> CliResult<()> {
    let mut text = String::from("sweep,elbo\n");
    for (i, e) in trace.iter().enumerate() {
        text.push_str(&format!("{i},{e:e}\n"));
    }
    fs::write(path, text).map_err(|e| runtime(path.display(), e))
}

fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("train");
    manifest.input("corpus", &args.corpus);
    let mut settings = settings_from(&args.model)?;
    if let Some(c) = &args.model.config {
        manifest.input("config", c);
    }
    let mut corpus = load_corpus(&args.corpus)?;
    if !args.ssl {
        let before = corpus.images.len();
        corpus = corpus.filter(|im| !im.unlabeled);
        if corpus.images.len() < before {
            warn!(
                "dropped {} unlabeled images; pass --ssl to use them",
                before - corpus.images.len()
            );
        }
    }
    let config = settings.model_config(corpus.num_classes, corpus.vocab_sizes.clone());
    config.validate()?;
    let prior = match args.prior.as_str() {
        "uniform" | "data" => {
            settings.prior.mode = if args.prior == "uniform" {
                PriorMode::Uniform
            } else {
                PriorMode::DataDriven
            };
            build_all_priors(&corpus, &config, &settings.prior)?
        }
        path => {
            let path = PathBuf::from(path);
            settings.prior.mode = PriorMode::Transferred;
            manifest.input("prior", &path);
            let opts = transfer_options(&settings, args.class_map.as_deref(), false)?;
            settings.transfer = opts.clone();
            prior_from_file(&path, &config, &corpus, &opts)?
        }
    };
    let similarity = match &args.similarity {
        Some(p) => {
            manifest.input("similarity", p);
            Some(load_similarity_matrix(p)?)
        }
        None => None,
    };
    let out = train(
        &corpus,
        &config,
        prior,
        settings.location_prior,
        &TrainOptions {
            similarity,
            m_step_period: settings.m_step_period,
            execution: Execution::Parallel,
            record_elbo: true,
        },
    )?;

    create_dir(&args.out_dir)?;
    let model_path = args.out_dir.join("model.json");
    save_model(&out.model, &model_path)?;
    let elbo_path = args.out_dir.join("elbo.csv");
    write_elbo_csv(&out.elbo_trace, &elbo_path)?;
    manifest
        .output("model", &model_path)
        .output("elbo", &elbo_path);
    for (name, strategy) in [
        ("gaussian", Strategy::Gaussian),
        ("sampling", Strategy::Sampling),
    ] {
        let per_image: Vec<Vec<Detection>> = corpus
            .images
            .par_iter()
            .zip(&out.posteriors)
            .map(|(image, post)| {
                if image.unlabeled {
                    return Ok(Vec::new());
                }
                detections_for(
                    &out.model,
                    post,
                    image,
                    image.labels.iter().copied(),
                    strategy,
                    &settings.heatmap,
                )
            })
            .collect::<CliResult<_>>()?;
        let path = args.out_dir.join(format!("detections_{name}.csv"));
        save_detections_csv(&per_image.concat(), &path)?;
        manifest.output(&format!("detections_{name}"), &path);
    }
    let effective = json!({
        "settings": settings,
        "prior": args.prior,
        "ssl": args.ssl,
        "similarity": args.similarity,
    });
    manifest.finish(
        &effective,
        Some(settings.seed),
        &args.out_dir.join("manifest.json"),
    )?;
    if let (Some(first), Some(last)) = (out.elbo_trace.first(), out.elbo_trace.last()) {
        info!("ELBO {first:.4} -> {last:.4}");
    }
    Ok(())
}

fn check_model_matches(model: &Model, corpus: &Corpus) -> CliResult<()> {
    if model.config.vocab_sizes != corpus.vocab_sizes {
        return Err(CliError::Validation(format!(
            "vocab_sizes: model has {:?}, corpus has {:?}",
            model.config.vocab_sizes, corpus.vocab_sizes
        )));
    }
    if model.config.num_classes != corpus.num_classes {
        return Err(CliError::Validation(format!(
            "num_classes: model has {}, corpus has {}",
            model.config.num_classes, corpus.num_classes
        )));
    }
    Ok(())
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn localise(args: &LocaliseArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("localise");
    manifest
        .input("model", &args.model)
        .input("corpus", &args.corpus);
    let settings: TrainSettings = load_or_default(args.config.as_deref())?;
    let heat = settings.heatmap;
    let model = load_model(&args.model)?;
    let corpus = load_corpus(&args.corpus)?;
    check_model_matches(&model, &corpus)?;
    let strategy = match args.strategy {
        StrategyArg::Gaussian => Strategy::Gaussian,
        StrategyArg::Sampling => Strategy::Sampling,
    };
    if let Some(dir) = &args.heatmaps {
        create_dir(dir)?;
    }
    let num_classes = model.config.num_classes;
    let per_image: Vec<Vec<Detection>> = corpus
        .images
        .par_iter()
        .map(|image| {
            if image.unlabeled && !args.force_all_classes {
                return Ok(Vec::new());
            }
            let mut image = image.clone();
            if args.force_all_classes {
                image.labels = (0..num_classes).collect();
                image.unlabeled = false;
            }
            let alpha = make_alpha(&image, &model.config);
            let post = infer_image(&model, &image, &alpha)?;
            if let Some(dir) = &args.heatmaps {
                for &class in &image.labels {
                    let map = heat_map(
                        &image,
                        &post.responsibilities,
                        model.config.topics_of(class),
                        heat.grid,
                        heat.blur,
                    );
                    let name = format!(
                        "{}__{}.pgm",
                        file_safe(&image.id),
                        file_safe(&model.class_names[class])
                    );
                    map.save_pgm(dir.join(name))?;
                }
            }
            detections_for(
                &model,
                &post,
                &image,
                image.labels.iter().copied(),
                strategy,
                &heat,
            )
        })
        .collect::<CliResult<_>>()?;
    save_detections_csv(&per_image.concat(), &args.out)?;
    manifest.output("detections", &args.out);
    if let Some(dir) = &args.heatmaps {
        manifest.output("heatmaps", dir);
    }
    let effective = json!({
        "strategy": format!("{:?}", args.strategy).to_lowercase(),
        "heatmap": heat,
        "force_all_classes": args.force_all_classes,
    });
    manifest.finish(&effective, None, &sidecar(&args.out))?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("evaluate");
    manifest
        .input("detections", &args.detections)
        .input("ground_truth", &args.ground_truth);
    let detections = load_detections_csv(&args.detections)?;
    let truth = load_ground_truth_csv(&args.ground_truth)?;
    let num_classes = args.num_classes.unwrap_or_else(|| {
        detections
            .iter()
            .map(|d| d.class_id)
            .chain(truth.iter().map(|g| g.class_id))
            .max()
            .map_or(0, |m| m + 1)
    });
    let rule = match args.rule {
        RuleArg::Strict => OverlapRule::Strict,
        RuleArg::Inclusive => OverlapRule::Inclusive,
    };
    let report = corloc(&detections, &truth, num_classes, rule);
    let mut rows = vec![["class", "evaluated", "correct", "corloc"].map(String::from)];
    for c in 0..num_classes {
        rows.push([
            c.to_string(),
            report.evaluated[c].to_string(),
            report.correct[c].to_string(),
            report.per_class[c].map_or("NA".into(), |v| format!("{v:.2}")),
        ]);
    }
    rows.push([
        "mean".into(),
        report.evaluated.iter().sum::<usize>().to_string(),
        report.correct.iter().sum::<usize>().to_string(),
        format!("{:.2}", report.mean),
    ]);
    let mut stdout = std::io::stdout().lock();
    for r in &rows {
        writeln!(stdout, "{}", r.join("\t")).map_err(|e| runtime("stdout", e))?;
    }
    let sidecar_base = match &args.out {
        Some(path) => {
            let text: String = rows.iter().map(|r| r.join(",") + "\n").collect();
            fs::write(path, text).map_err(|e| runtime(path.display(), e))?;
            manifest.output("corloc", path);
            path.clone()
        }
        None => args.detections.with_extension("corloc"),
    };
    let effective = json!({
        "num_classes": num_classes,
        "rule": format!("{:?}", args.rule).to_lowercase(),
    });
    manifest.finish(&effective, None, &sidecar(&sidecar_base))?;
    Ok(())
}

fn transfer(args: &TransferArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("transfer");
    manifest
        .input("model", &args.model)
        .input("corpus", &args.corpus);
    let mut settings = settings_from(&args.model_flags)?;
    let source = load_model(&args.model)?;
    let corpus = load_corpus(&args.corpus)?;
    let config = settings.model_config(corpus.num_classes, corpus.vocab_sizes.clone());
    config.validate()?;
    let opts = transfer_options(&settings, args.class_map.as_deref(), args.no_background)?;
    settings.transfer = opts.clone();
    let prior = export_posterior_as_prior(&source, &config, &corpus.class_names, &opts)?;
    let text = serde_json::to_string(&prior).expect("prior serialises");
    fs::write(&args.out, text + "\n").map_err(|e| runtime(args.out.display(), e))?;
    manifest.output("prior", &args.out);
    manifest.finish(&settings, Some(settings.seed), &sidecar(&args.out))?;
    Ok(())
}

fn smooth(args: &SmoothArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("smooth");
    manifest.input("track", &args.track);
    let config = StateSpaceConfig::constant_velocity(args.process_noise, args.observation_noise);
    let track = load_track_csv(&args.track)?;
    let scale = args.image_width.zip(args.image_height);
    let normalised: Vec<TrackFrame> = match scale {
        Some((w, h)) => track
            .iter()
            .map(|f| TrackFrame {
                frame: f.frame,
                bbox: f.bbox.to_normalized(w, h),
            })
            .collect(),
        None => track,
    };
    let mut smoothed = smooth_track(&normalised, &config)?;
    if let Some((w, h)) = scale {
        for f in &mut smoothed {
            f.bbox = f.bbox.to_pixels(w, h);
        }
    }
    save_smoothed_csv(&smoothed, &args.out)?;
    manifest.output("smoothed", &args.out);
    let effective = json!({
        "process_noise": args.process_noise,
        "observation_noise": args.observation_noise,
        "image_width": args.image_width,
        "image_height": args.image_height,
    });
    manifest.finish(&effective, None, &sidecar(&args.out))?;
    Ok(())
}
