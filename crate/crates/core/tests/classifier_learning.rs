mod common;

use common::corpus_from_rows;
use hdialog::classifier::{
    best_threshold, grad_step, gradient, incremental_update, pretrain, restore, snapshot, ClassifierParams, Example,
    TrainConfig,
};
use hdialog::corpus::{generate_corpus, Corpus, GenConfig, Partition};
use hdialog::Execution;

fn f1_for(params: &ClassifierParams, corpus: &Corpus, items: &[usize], w: usize) -> f64 {
    let probs: Vec<f64> = items
        .iter()
        .map(|&i| params.probabilities(&corpus.items[i].features).unwrap()[w])
        .collect();
    let labels: Vec<bool> = items.iter().map(|&i| corpus.items[i].labels[w] == 1).collect();
    best_threshold(&probs, &labels).f1
}

fn full_examples(corpus: &Corpus) -> Vec<Example<'_>> {
    corpus
        .items
        .iter()
        .map(|it| Example::fully_labeled(&it.features, &it.labels))
        .collect()
}

#[test]
fn separable_toy_reaches_perfect_f1() {
    let rows: Vec<Vec<u8>> = (0..8u8).map(|m| vec![m & 1, (m >> 1) & 1, (m >> 2) & 1]).collect();
    let descriptions = vec![Vec::new(); rows.len()];
    let corpus = corpus_from_rows(
        &rows,
        &descriptions,
        Partition {
            pretrain: vec![0, 1, 2],
            ..Partition::default()
        },
    );
    let mut params = ClassifierParams::new(corpus.dim, 3, 4);
    let cfg = TrainConfig {
        epochs: 400,
        batch_size: 8,
        learning_rate: 0.02,
        ..TrainConfig::default()
    };
    pretrain(&mut params, &full_examples(&corpus), &cfg, Execution::Sequential).unwrap();
    let all: Vec<usize> = (0..rows.len()).collect();
    for w in 0..3 {
        assert_eq!(f1_for(&params, &corpus, &all, w), 1.0, "attribute {w}");
    }
}

#[test]
fn full_batch_loss_goes_down() {
    let corpus = generate_corpus(
        &GenConfig {
            dim: 12,
            num_attributes: 5,
            item_count: 200,
            ..GenConfig::default()
        },
        3,
    )
    .unwrap();
    let batch = full_examples(&corpus);
    let mut params = ClassifierParams::new(12, 5, 9);
    let cfg = TrainConfig {
        learning_rate: 0.005,
        ..TrainConfig::default()
    };
    let first = grad_step(&mut params, &batch, &cfg, Execution::Sequential).unwrap();
    let mut last = first;
    for _ in 0..49 {
        last = grad_step(&mut params, &batch, &cfg, Execution::Sequential).unwrap();
    }
    assert!(last < 0.8 * first, "{first} -> {last}");
}

#[test]
fn incremental_labels_raise_novel_attribute_f1() {
    let corpus = generate_corpus(
        &GenConfig {
            dim: 16,
            num_attributes: 8,
            item_count: 900,
            ..GenConfig::default()
        },
        5,
    )
    .unwrap();
    let k = corpus.num_attributes();
    let novel = (0..k)
        .max_by_key(|&w| corpus.items[..400].iter().filter(|it| it.labels[w] == 1).count())
        .unwrap();
    let pre: Vec<Example<'_>> = corpus.items[..400]
        .iter()
        .map(|it| Example {
            features: &it.features,
            labels: it.labels.clone(),
            mask: (0..k).map(|w| w != novel).collect(),
        })
        .collect();
    let mut params = ClassifierParams::new(16, k, 1);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 64,
        ..TrainConfig::default()
    };
    pretrain(&mut params, &pre, &cfg, Execution::Sequential).unwrap();
    let held_out: Vec<usize> = (600..900).collect();
    let before = f1_for(&params, &corpus, &held_out, novel);

    let touched: Vec<Example<'_>> = corpus.items[400..600]
        .iter()
        .map(|it| Example {
            features: &it.features,
            labels: it.labels.clone(),
            mask: (0..k).map(|w| w == novel).collect(),
        })
        .collect();
    for _ in 0..10 {
        incremental_update(&mut params, &touched, &cfg, Execution::Sequential).unwrap();
    }
    let after = f1_for(&params, &corpus, &held_out, novel);
    assert!(after > before + 0.05 && after > 0.5, "{before} -> {after}");
}

#[test]
fn parallel_and_sequential_gradients_are_identical() {
    let corpus = generate_corpus(
        &GenConfig {
            dim: 10,
            num_attributes: 6,
            item_count: 300,
            ..GenConfig::default()
        },
        8,
    )
    .unwrap();
    let batch = full_examples(&corpus);
    let params = ClassifierParams::new(10, 6, 2);
    let (ls, gs) = gradient(&params, &batch, 0.9, Execution::Sequential);
    let (lp, gp) = gradient(&params, &batch, 0.9, Execution::Parallel);
    assert_eq!(ls.to_bits(), lp.to_bits());
    assert_eq!(gs, gp);
}

#[test]
fn snapshot_round_trip_and_rejects_garbage() {
    let params = ClassifierParams::new(4, 3, 7);
    assert_eq!(restore(&snapshot(&params)).unwrap(), params);
    assert!(restore(b"{not json").is_err());
}

#[test]
fn wrong_feature_length_is_rejected() {
    let mut params = ClassifierParams::new(4, 2, 0);
    assert!(params.forward(&[1.0, 2.0]).is_err());
    let x = [0.0; 3];
    let batch = [Example::fully_labeled(&x, &[1, 0])];
    assert!(grad_step(&mut params, &batch, &TrainConfig::default(), Execution::Sequential).is_err());
    assert_eq!(params.step, 0);
}
