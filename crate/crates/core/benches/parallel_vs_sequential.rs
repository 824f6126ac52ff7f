use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hdialog::classifier::{gradient, ClassifierParams, Example};
use hdialog::corpus::{generate_corpus, GenConfig, Split};
use hdialog::experiment::{refresh_retrieval, Experiment, ExperimentConfig, Phase, PhaseCounts};
use hdialog::policy::BundleSpec;
use hdialog::Execution;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn classifier_gradient(c: &mut Criterion) {
    let corpus = generate_corpus(&GenConfig::default(), 0).unwrap();
    let params = ClassifierParams::new(corpus.dim, corpus.num_attributes(), 0);
    let batch: Vec<Example<'_>> = corpus.items[..256]
        .iter()
        .map(|it| Example::fully_labeled(&it.features, &it.labels))
        .collect();
    let mut g = c.benchmark_group("classifier_gradient_256");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gradient(black_box(&params), black_box(&batch), 0.9, exec))
        });
    }
    g.finish();
}

fn experiment(exec: Execution) -> Experiment {
    let mut exp = Experiment::new(ExperimentConfig {
        policy: BundleSpec::all_static(),
        phases: PhaseCounts {
            initialization: 1,
            training: 0,
            testing: 0,
        },
        execution: exec,
        ..ExperimentConfig::default()
    })
    .unwrap();
    exp.config.classifier.epochs = 5;
    exp.pretrain().unwrap();
    exp
}

fn retrieval(c: &mut Criterion) {
    let mut g = c.benchmark_group("retrieval_refresh");
    g.sample_size(10);
    for (name, exec) in MODES {
        let exp = experiment(exec);
        let stats = exp.tune().unwrap();
        let pool = &exp.splits.set(Split::Train).classifier_test;
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                refresh_retrieval(&exp.classifier, &stats, &exp.corpus, pool, &exp.config.retrieval, exec).unwrap()
            })
        });
    }
    g.finish();
}

fn dialog_batch(c: &mut Criterion) {
    let mut g = c.benchmark_group("dialog_batch_100");
    g.sample_size(10);
    for (name, exec) in MODES {
        let base = experiment(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || base.clone(),
                |mut exp| {
                    exp.run_batch(Phase::Initialization, 0).unwrap();
                },
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, classifier_gradient, retrieval, dialog_batch);
criterion_main!(benches);
