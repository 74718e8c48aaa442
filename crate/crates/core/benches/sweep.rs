use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wsol::inference::{train, NormalWishart, TrainOptions};
use wsol::parallel::Execution;
use wsol::priors::{build_all_priors, PriorConfig};
use wsol::synth::{sample_corpus, SynthConfig};

fn sweeps(c: &mut Criterion) {
    let sc = SynthConfig {
        num_images: 200,
        tokens_per_image: 150,
        ..Default::default()
    };
    let (corpus, _) = sample_corpus(&sc).expect("synthetic corpus");
    let mut cfg = sc.model_config();
    cfg.iterations = 5;
    let prior = build_all_priors(&corpus, &cfg, &PriorConfig::default()).expect("prior");

    let mut group = c.benchmark_group("train_5_sweeps");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let options = TrainOptions {
            execution,
            record_elbo: false,
            ..Default::default()
        };
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{execution:?}").to_lowercase()),
            &options,
            |b, options| {
                b.iter(|| {
                    train(
                        &corpus,
                        &cfg,
                        prior.clone(),
                        NormalWishart::default(),
                        options,
                    )
                    .expect("training succeeds")
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, sweeps);
criterion_main!(benches);
