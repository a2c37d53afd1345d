use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{split_dataset, Adam, Metrics, TrainConfig, TrainError};
use crate::autodiff::Tensor;
use crate::model::{Batch, Classifier, HeadInit, ModelError, SampleInput};
use crate::parallel::{self, Execution};

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Samples usable by the model plus those set aside.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<SampleInput>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

impl Dataset {
    /// Keeps samples that validate at `text_dim`; samples with an empty graph
    /// are skipped. Any other defect is an error.
    pub fn from_inputs(inputs: Vec<SampleInput>, text_dim: usize) -> Result<Self, TrainError> {
        let mut out = Dataset::default();
        for s in inputs {
            match s.validate(text_dim) {
                Ok(()) => out.samples.push(s),
                Err(ModelError::EmptyGraph { id, side }) => out.skipped.push(Skipped {
                    id,
                    reason: format!("empty {side} graph"),
                }),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }

    pub fn total(&self) -> usize {
        self.samples.len() + self.skipped.len()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn text_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.evidence.text_dim)
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_f1: f64,
    pub skipped: usize,
    pub train_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best test accuracy (the
    /// initialization when no epoch ran).
    pub best: Classifier<f32>,
    pub best_epoch: usize,
    pub last: Classifier<f32>,
    pub log: Vec<EpochRecord>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Mean loss of the very first batch.
    pub first_batch_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub scores: Vec<f64>,
    pub skipped: usize,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Scores for `samples`, in order.
fn score_all(
    model: &Classifier<f32>,
    samples: &[&SampleInput],
    chunk: usize,
    exec: Execution,
) -> Result<Vec<f64>, TrainError> {
    let chunks: Vec<&[&SampleInput]> = samples.chunks(chunk.max(1)).collect();
    let text_dim = model.config().text_dim;
    let edge = model.config().edge_features;
    let parts = parallel::map(exec, &chunks, |c| -> Result<Vec<f64>, ModelError> {
        let batch = Batch::<f32>::new(c, text_dim, edge)?;
        model.predict(&batch)
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Binarizes at `threshold` and scores against the labels.
pub fn evaluate(
    model: &Classifier<f32>,
    samples: &[&SampleInput],
    threshold: f64,
    exec: Execution,
) -> Result<Evaluation, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Data("evaluation set is empty".into()));
    }
    let scores = score_all(model, samples, 16, exec)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        metrics: Metrics::from_scores(&scores, &labels, threshold)?,
        scores,
        skipped: 0,
    })
}

/// Evaluates every usable sample of `data`, reporting its skips.
pub fn evaluate_dataset(
    model: &Classifier<f32>,
    data: &Dataset,
    threshold: f64,
    exec: Execution,
) -> Result<Evaluation, TrainError> {
    let refs: Vec<&SampleInput> = data.samples.iter().collect();
    let mut ev = evaluate(model, &refs, threshold, exec)?;
    ev.skipped = data.skipped.len();
    Ok(ev)
}

/// Trains with Adam on mean BCE, logging one JSON line per epoch to `log`.
pub fn train(
    config: &TrainConfig,
    data: &Dataset,
    exec: Execution,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.samples.is_empty() {
        return Err(TrainError::Data(format!(
            "all {} samples were skipped",
            data.skipped.len()
        )));
    }
    if let Some(dim) = data.text_dim().filter(|&d| d != config.embedding_dim) {
        return Err(TrainError::Config(format!(
            "dataset embeddings have dim {dim}, config expects {}",
            config.embedding_dim
        )));
    }
    let (train_idx, test_idx) = split_dataset(&data.labels(), config.train_ratio, config.seed ^ SPLIT_STREAM)?;
    let train_set: Vec<&SampleInput> = train_idx.iter().map(|&i| &data.samples[i]).collect();
    let test_set: Vec<&SampleInput> = test_idx.iter().map(|&i| &data.samples[i]).collect();

    let mut model = Classifier::<f32>::new(config.model_config(), config.seed, HeadInit::Zero)?;
    let mut opt = Adam::new(config.lr, model.params());
    let mut shuffle = rng(config.seed, SHUFFLE_STREAM);

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut records = Vec::with_capacity(config.epochs);
    let mut first_batch_loss = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for (b, batch_idx) in order.chunks(config.batch_size).enumerate() {
            let members: Vec<&SampleInput> = batch_idx.iter().map(|&i| train_set[i]).collect();
            let chunks: Vec<&[&SampleInput]> = members.chunks(config.sub_batch).collect();
            let total = members.len() as f32;
            let results = parallel::map(exec, &chunks, |c| {
                let batch = Batch::<f32>::new(c, config.embedding_dim, config.use_edge_features)?;
                model.loss_and_grads(&batch, c.len() as f32 / total)
            });
            let mut grads: Option<Vec<Tensor<f32>>> = None;
            let mut batch_loss = 0.0;
            for (r, c) in results.into_iter().zip(&chunks) {
                let (loss, _, g) = r.map_err(|e| match e {
                    ModelError::Autodiff(a) => TrainError::Numeric(format!("epoch {epoch}, batch {}: {a}", b + 1)),
                    other => other.into(),
                })?;
                batch_loss += loss * c.len() as f64 / total as f64;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Numeric(format!(
                    "epoch {epoch}, batch {}: loss is {batch_loss}",
                    b + 1
                )));
            }
            first_batch_loss.get_or_insert(batch_loss);
            loss_sum += batch_loss * members.len() as f64;
            opt.step(model.params_mut(), &grads.expect("non-empty batch"));
        }

        let train_eval = evaluate(&model, &train_set, config.threshold, exec)?;
        let (test_acc, test_f1) = if test_set.is_empty() {
            (0.0, 0.0)
        } else {
            let e = evaluate(&model, &test_set, config.threshold, exec)?;
            (e.metrics.accuracy, e.metrics.f1)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            test_acc,
            test_f1,
            skipped: data.skipped.len(),
            train_acc: train_eval.metrics.accuracy,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        }
        if test_acc > best_acc {
            best_acc = test_acc;
            best = model.clone();
            best_epoch = epoch;
        }
        records.push(record);
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        log: records,
        train_idx,
        test_idx,
        first_batch_loss,
    })
}
