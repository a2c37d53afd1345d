use ctxgraph::autodiff::Tensor;
use ctxgraph::model::{Classifier, HeadInit};
use ctxgraph::parallel::Execution;
use ctxgraph::train::{split_dataset, synthetic, train, Adam, Dataset, Metrics, TrainConfig, TrainError};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        embedding_dim: 384,
        hidden: 16,
        heads: vec![2, 2],
        batch_size: 16,
        epochs: 2,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

#[test]
fn metrics_from_hand_counts() {
    let m = Metrics::from_counts(3, 1, 4, 2).unwrap();
    assert_eq!(m.n, 10);
    assert!((m.accuracy - 0.7).abs() < 1e-12);
    // precision 3/4, recall 3/5
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.precision() - 0.75).abs() < 1e-12 && (m.recall() - 0.6).abs() < 1e-12);

    assert_eq!(Metrics::from_counts(0, 0, 5, 0).unwrap().f1, 0.0);
    assert_eq!(Metrics::from_counts(0, 3, 0, 2).unwrap().f1, 0.0);
    assert!(Metrics::from_counts(0, 0, 0, 0).is_err());

    let s = Metrics::from_scores(&[0.9, 0.5, 0.49, 0.1], &[1, 0, 1, 0], 0.5).unwrap();
    assert_eq!((s.tp, s.fp, s.fn_, s.tn), (1, 1, 1, 1));
    assert!(Metrics::from_scores(&[0.1], &[1, 0], 0.5).is_err());
}

#[test]
fn stratified_split_sizes() {
    let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 2 == 0)).collect();
    let (tr, te) = split_dataset(&labels, 0.85, 7).unwrap();
    assert_eq!((tr.len(), te.len()), (85, 15));
    let pos = tr.iter().filter(|&&i| labels[i] == 1).count();
    assert!(pos == 42 || pos == 43, "{pos}");
    let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
    all.sort();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    assert_eq!(split_dataset(&labels, 0.85, 7).unwrap(), (tr.clone(), te));
    assert_ne!(split_dataset(&labels, 0.85, 8).unwrap().0, tr);

    // 30 positives, 70 negatives keep their proportion.
    let skewed: Vec<u8> = (0..100).map(|i| u8::from(i < 30)).collect();
    let (tr, _) = split_dataset(&skewed, 0.8, 1).unwrap();
    assert_eq!(tr.iter().filter(|&&i| skewed[i] == 1).count(), 24);
}

#[test]
fn split_errors() {
    let labels = [0u8, 1, 0, 1];
    assert!(matches!(split_dataset(&labels, 1.5, 0), Err(TrainError::Config(_))));
    assert!(split_dataset(&labels, 0.01, 0).is_err());
    assert!(split_dataset(&labels, 0.99, 0).is_err());
    assert!(split_dataset(&[1u8], 0.5, 0).is_err());
    assert!(split_dataset(&[1u8, 1, 1], 0.5, 0).is_err());
    assert!(split_dataset(&[0u8, 2], 0.5, 0).is_err());
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig {
            lr: 0.0,
            ..tiny_config()
        },
        TrainConfig {
            batch_size: 0,
            ..tiny_config()
        },
        TrainConfig {
            train_ratio: 1.0,
            ..tiny_config()
        },
        TrainConfig {
            heads: vec![3],
            ..tiny_config()
        },
        TrainConfig {
            threshold: 2.0,
            ..tiny_config()
        },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(TrainError::Config(_))), "{c:?}");
    }
    let json = serde_json::to_string(&TrainConfig::default()).unwrap();
    let back: TrainConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, TrainConfig::default());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate":0.1}"#).is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut params = vec![Tensor::from_rows(&[vec![1.0f32, -2.0, 0.5]]).unwrap()];
    let grads = vec![Tensor::from_rows(&[vec![0.3f32, -4.0, 0.0]]).unwrap()];
    let mut opt = Adam::new(0.1, &params);
    opt.step(&mut params, &grads);
    // Bias-corrected first step is lr·sign(g) for non-zero g.
    let want = [0.9f32, -1.9, 0.5];
    for (a, b) in params[0].data().iter().zip(want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert_eq!(opt.steps(), 1);
}

#[test]
fn zero_epochs_returns_initialization() {
    let data = synthetic::dataset(20, 0, 384, Execution::Sequential).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..tiny_config()
    };
    let out = train(&cfg, &data, Execution::Sequential, None).unwrap();
    let init = Classifier::<f32>::new(cfg.model_config(), cfg.seed, HeadInit::Zero).unwrap();
    assert_eq!(out.best, init);
    assert_eq!(out.best_epoch, 0);
    assert!(out.log.is_empty() && out.first_batch_loss.is_none());
}

#[test]
fn first_batch_loss_is_ln_two() {
    let data = synthetic::dataset(40, 1, 384, Execution::Sequential).unwrap();
    let out = train(&tiny_config(), &data, Execution::Sequential, None).unwrap();
    let l = out.first_batch_loss.unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-6, "{l}");
}

#[test]
fn log_lines_and_split_cover_everything() {
    let data = synthetic::dataset(40, 2, 384, Execution::Sequential).unwrap();
    let mut log = Vec::new();
    let out = train(&tiny_config(), &data, Execution::Sequential, Some(&mut log)).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        for k in ["train_loss", "test_acc", "test_f1", "skipped", "train_acc"] {
            assert!(l.get(k).is_some(), "{k}");
        }
    }
    assert_eq!(out.train_idx.len() + out.test_idx.len(), data.samples.len());
}

#[test]
fn empty_graphs_are_skipped_and_counted() {
    let mut data = synthetic::dataset(12, 3, 384, Execution::Sequential).unwrap();
    let mut inputs = data.samples.clone();
    inputs[0].claim.nodes = 0;
    inputs[0].claim.text.clear();
    inputs[0].claim.structure.clear();
    inputs[0].claim.edges.clear();
    data = Dataset::from_inputs(inputs, 384).unwrap();
    assert_eq!((data.samples.len(), data.skipped.len(), data.total()), (11, 1, 12));
    assert_eq!(data.skipped[0].reason, "empty claim graph");
    let out = train(&tiny_config(), &data, Execution::Sequential, None).unwrap();
    assert!(out.log.iter().all(|r| r.skipped == 1));
}

#[test]
fn dimension_mismatch_is_a_config_error() {
    let data = synthetic::dataset(10, 0, 384, Execution::Sequential).unwrap();
    let cfg = TrainConfig {
        embedding_dim: 32,
        ..tiny_config()
    };
    assert!(matches!(
        train(&cfg, &data, Execution::Sequential, None),
        Err(TrainError::Config(_))
    ));
    let empty = Dataset::default();
    assert!(matches!(
        train(&tiny_config(), &empty, Execution::Sequential, None),
        Err(TrainError::Data(_))
    ));
}

#[test]
fn sequential_and_parallel_agree() {
    let data = synthetic::dataset(30, 4, 384, Execution::Sequential).unwrap();
    let a = train(&tiny_config(), &data, Execution::Sequential, None).unwrap();
    let b = train(&tiny_config(), &data, Execution::Parallel, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.last, b.last);
}
