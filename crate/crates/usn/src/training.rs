//! Epoch/minibatch training loop, metrics, history recording, and replicate
//! aggregation with fixed-vs-random topology modes.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::network::{cross_entropy, init_model_with_topology_seeds, Model, ModelConfig};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::sparselinalg::DenseMatrix;
use crate::topology::{pattern_distance, SparsityPattern};

/// Evaluation passes stream the data in chunks of this many samples.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Wall-clock seconds for the epoch (training plus evaluation).
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub seed: u64,
    pub config: ModelConfig,
}

impl TrainHistory {
    pub fn final_record(&self) -> &EpochRecord {
        self.records.last().expect("history has at least one epoch")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyMode {
    /// One topology drawn from the master seed and reused by every run.
    Fixed,
    /// A fresh topology per run.
    Random,
}

/// Per-epoch 10/50/90 percentiles of each metric across runs, plus the
/// variance diagnostics and mean pairwise topology distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub epochs: usize,
    pub n_runs: usize,
    pub train_loss: PercentileBands,
    pub train_acc: PercentileBands,
    pub val_loss: PercentileBands,
    pub val_acc: PercentileBands,
    /// 1-based epoch minimizing the median validation loss.
    pub converging_epoch: usize,
    /// Variance of validation loss across runs at the final epoch.
    pub final_loss_variance: f64,
    /// Variance of validation loss across runs at the converging epoch.
    pub converging_loss_variance: f64,
    /// Mean pairwise first-layer pattern distance across runs (0 for fixed
    /// mode and for single runs).
    pub mean_topology_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PercentileBands {
    pub p10: Vec<f64>,
    pub p50: Vec<f64>,
    pub p90: Vec<f64>,
}

/// Trains `model` in place. Each epoch shuffles the training set with a
/// seeded permutation, steps over minibatches, then evaluates both sets in
/// evaluation mode. Deterministic in (model, data, `seed`, `batch_size`)
/// up to the wall-clock column.
pub fn fit(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<TrainHistory> {
    if epochs == 0 || batch_size == 0 {
        return Err(Error::Domain("epochs and batch_size must be >= 1".into()));
    }
    if train.n_samples() == 0 {
        return Err(Error::Domain("empty training set".into()));
    }
    let mut shuffle_rng = rng_from_seed(derive_seed(seed, stream::SHUFFLE));
    let mut dropout_rng = rng_from_seed(derive_seed(seed, stream::DROPOUT));
    let n = train.n_samples();
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch_size) {
            let x = train.features.select_cols(chunk);
            let y = train.labels.select_cols(chunk);
            let (probs, cache) = model.forward(&x, true, &mut dropout_rng)?;
            let (loss, grads) = model.loss_and_grad(&probs, &y, &cache)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, step {}",
                    model.step() + 1
                )));
            }
            model.nadam_step(&grads)?;
        }
        let (train_loss, train_acc) = evaluate(model, train)?;
        let (val_loss, val_acc) = if val.n_samples() > 0 {
            evaluate(model, val)?
        } else {
            (train_loss, train_acc)
        };
        records.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainHistory {
        records,
        seed,
        config: model.config().clone(),
    })
}

/// Full-pass evaluation-mode loss and accuracy, streamed in chunks.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    let n = data.n_samples();
    if n == 0 {
        return Err(Error::Domain("empty evaluation set".into()));
    }
    let indices: Vec<usize> = (0..n).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0.0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = data.features.select_cols(chunk);
        let y = data.labels.select_cols(chunk);
        let probs = model.predict(&x)?;
        loss_sum += cross_entropy(&probs, &y) * chunk.len() as f64;
        correct += accuracy(&probs, &y) * chunk.len() as f64;
    }
    Ok((loss_sum / n as f64, correct / n as f64))
}

/// Fraction of columns where the predicted argmax matches the label argmax.
/// Ties go to the lowest class index on both sides.
pub fn accuracy(probabilities: &DenseMatrix, labels: &DenseMatrix) -> f64 {
    let batch = probabilities.cols();
    if batch == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    for b in 0..batch {
        if argmax_col(probabilities, b) == argmax_col(labels, b) {
            correct += 1;
        }
    }
    correct as f64 / batch as f64
}

fn argmax_col(m: &DenseMatrix, b: usize) -> usize {
    let mut best = 0usize;
    let mut best_v = m.get(0, b);
    for i in 1..m.rows() {
        let v = m.get(i, b);
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// 1-based index of the epoch minimizing the median validation loss, first
/// occurrence on ties.
pub fn converging_epoch(median_val_loss: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in median_val_loss.iter().enumerate() {
        if v < median_val_loss[best] {
            best = i;
        }
    }
    best + 1
}

/// Per-epoch train minus validation loss; overfitting drives it negative.
pub fn overfit_gap(history: &TrainHistory) -> Vec<f64> {
    history
        .records
        .iter()
        .map(|r| r.train_loss - r.val_loss)
        .collect()
}

/// Percentile with linear interpolation between order statistics,
/// `p` in [0,1].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Sample variance (n-1 denominator); 0 for a single value.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// Result of `run_replicates`: all run histories, their aggregate, and the
/// trained model of run 0 (for checkpointing).
pub struct ReplicateOutcome {
    pub histories: Vec<TrainHistory>,
    pub summary: ReplicateSummary,
    pub first_model: Model,
}

/// Runs `n_runs` independent replicates of the same experiment. Fixed mode
/// derives one set of topology seeds from the master seed and shares it;
/// random mode derives fresh topology seeds per run. Weight init and
/// shuffling always vary by run. Deterministic in the arguments even though
/// replicates execute in parallel.
#[allow(clippy::too_many_arguments)]
pub fn run_replicates(
    config: &ModelConfig,
    train: &Dataset,
    val: &Dataset,
    epochs: usize,
    batch_size: usize,
    n_runs: usize,
    topology_mode: TopologyMode,
    master_seed: u64,
) -> Result<ReplicateOutcome> {
    if n_runs == 0 {
        return Err(Error::Domain("n_runs must be >= 1".into()));
    }
    let n_layers = config.hidden_layers.len();
    let fixed_seeds: Vec<u64> = (0..n_layers)
        .map(|l| derive_seed(master_seed, stream::TOPOLOGY + l as u64))
        .collect();
    let results: Vec<Result<(TrainHistory, Vec<SparsityPattern>, Model)>> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = derive_seed(master_seed, stream::RUN + run as u64);
            let topo_seeds: Vec<u64> = match topology_mode {
                TopologyMode::Fixed => fixed_seeds.clone(),
                TopologyMode::Random => (0..n_layers)
                    .map(|l| derive_seed(run_seed, stream::TOPOLOGY + l as u64))
                    .collect(),
            };
            let mut run_config = config.clone();
            run_config.seed = run_seed;
            let mut model = init_model_with_topology_seeds(&run_config, &topo_seeds)?;
            let patterns: Vec<SparsityPattern> = model
                .sparse_layers()
                .iter()
                .map(|l| l.weights.matrix.pattern().clone())
                .collect();
            let history = fit(&mut model, train, val, epochs, batch_size, run_seed)?;
            Ok((history, patterns, model))
        })
        .collect();
    let mut histories = Vec::with_capacity(n_runs);
    let mut patterns = Vec::with_capacity(n_runs);
    let mut first_model = None;
    for r in results {
        let (h, p, m) = r?;
        if first_model.is_none() {
            first_model = Some(m);
        }
        histories.push(h);
        patterns.push(p);
    }
    let summary = summarize(&histories, &patterns)?;
    Ok(ReplicateOutcome {
        histories,
        summary,
        first_model: first_model.expect("n_runs >= 1"),
    })
}

fn summarize(histories: &[TrainHistory], patterns: &[Vec<SparsityPattern>]) -> Result<ReplicateSummary> {
    let epochs = histories[0].records.len();
    let n_runs = histories.len();
    let bands = |f: &dyn Fn(&EpochRecord) -> f64| -> PercentileBands {
        let mut p10 = Vec::with_capacity(epochs);
        let mut p50 = Vec::with_capacity(epochs);
        let mut p90 = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let vals: Vec<f64> = histories.iter().map(|h| f(&h.records[e])).collect();
            p10.push(percentile(&vals, 0.1));
            p50.push(percentile(&vals, 0.5));
            p90.push(percentile(&vals, 0.9));
        }
        PercentileBands { p10, p50, p90 }
    };
    let val_loss = bands(&|r| r.val_loss);
    let conv = converging_epoch(&val_loss.p50);
    let loss_at = |e: usize| -> Vec<f64> {
        histories.iter().map(|h| h.records[e].val_loss).collect()
    };
    let mut dist_sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..n_runs {
        for b in a + 1..n_runs {
            // first hidden layer carries the compared topology
            if let (Some(pa), Some(pb)) = (patterns[a].first(), patterns[b].first()) {
                dist_sum += pattern_distance(pa, pb)?;
                pairs += 1;
            }
        }
    }
    Ok(ReplicateSummary {
        epochs,
        n_runs,
        train_loss: bands(&|r| r.train_loss),
        train_acc: bands(&|r| r.train_acc),
        val_loss,
        val_acc: bands(&|r| r.val_acc),
        converging_epoch: conv,
        final_loss_variance: variance(&loss_at(epochs - 1)),
        converging_loss_variance: variance(&loss_at(conv - 1)),
        mean_topology_distance: if pairs > 0 { dist_sum / pairs as f64 } else { 0.0 },
    })
}
