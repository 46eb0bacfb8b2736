//! Mini-batch training under 3-fold cross-validation, and evaluation.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{make_folds, shuffled_indices, BrainGraph, GraphDataset, NUM_FOLDS};
use crate::error::{Error, Result};
use crate::iso::MatchMode;
use crate::train::adam::Adam;
use crate::train::loss::LossTerms;
use crate::train::model::{Ablation, Model, ModelConfig};
use crate::train::params::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub k: usize,
    pub channels: usize,
    /// Class capsule dimension; `k²` when unset.
    pub capsule_dim: Option<usize>,
    pub gamma: f64,
    pub delta: f64,
    pub routing_iterations: usize,
    pub match_mode: MatchMode,
    pub ablation: Ablation,
    pub seed: u64,
    /// Stop a fold once the epoch training loss has not improved for this
    /// many epochs.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 5e-4,
            epochs: 100,
            batch_size: 64,
            k: 4,
            channels: 3,
            capsule_dim: None,
            gamma: 0.1,
            delta: 0.0005,
            routing_iterations: 3,
            match_mode: MatchMode::Bruteforce,
            ablation: Ablation::None,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::BadConfig(msg.into()));
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad("delta must be a finite non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if self.batch_size == 0 || self.k == 0 || self.channels == 0 || self.capsule_dim == Some(0)
        {
            return bad("batch size, k, c and d_c must be positive");
        }
        if self.routing_iterations == 0 {
            return Err(Error::BadIterations(0));
        }
        if self.patience == Some(0) {
            return bad("patience must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, n: usize) -> ModelConfig {
        ModelConfig {
            n,
            k: self.k,
            channels: self.channels,
            capsule_dim: self.capsule_dim.unwrap_or(self.k * self.k),
            gamma: self.gamma,
            routing_iterations: self.routing_iterations,
            match_mode: self.match_mode,
            ablation: self.ablation,
        }
    }
}

/// Accuracy and positive-class F1 of hard predictions.
pub fn binary_scores(predictions: &[usize], labels: &[usize]) -> (f64, f64) {
    let total = labels.len();
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let tp = predictions
        .iter()
        .zip(labels)
        .filter(|&(&p, &l)| p == 1 && l == 1)
        .count() as f64;
    let fp = predictions
        .iter()
        .zip(labels)
        .filter(|&(&p, &l)| p == 1 && l != 1)
        .count() as f64;
    let fne = predictions
        .iter()
        .zip(labels)
        .filter(|&(&p, &l)| p != 1 && l == 1)
        .count() as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let accuracy = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    (accuracy, f1)
}

/// Mean losses and scores over a set of graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss_margin: f64,
    pub loss_recon: f64,
    pub loss_total: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    fn from_outcomes(
        terms: &[LossTerms],
        predictions: Vec<usize>,
        labels: &[usize],
        recon_weight: f64,
    ) -> Self {
        let count = terms.len().max(1) as f64;
        let loss_margin = terms.iter().map(|t| t.margin).sum::<f64>() / count;
        let loss_recon = terms.iter().map(|t| t.reconstruction).sum::<f64>() / count;
        let (accuracy, f1) = binary_scores(&predictions, labels);
        Self {
            loss_margin,
            loss_recon,
            loss_total: loss_margin + recon_weight * loss_recon,
            accuracy,
            f1,
            predictions,
        }
    }
}

pub fn evaluate(model: &Model, graphs: &[BrainGraph], delta: f64) -> Result<Evaluation> {
    if graphs.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let outcomes: Vec<(LossTerms, usize)> = graphs
        .par_iter()
        .map(|g| model.forward(g).map(|f| (f.loss, f.prediction)))
        .collect::<Result<_>>()?;
    let (terms, predictions): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    Ok(Evaluation::from_outcomes(
        &terms,
        predictions,
        &labels,
        model.recon_weight(delta),
    ))
}

/// Training-split statistics of one epoch (accumulated while the
/// parameters were being updated).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_margin: f64,
    pub loss_recon: f64,
    pub loss_total: f64,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub epochs: Vec<EpochRecord>,
    pub test: Evaluation,
}

/// Extremes of the routing coefficients seen during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingStats {
    pub min_coefficient: f64,
    pub max_mass: f64,
}

impl Default for RoutingStats {
    fn default() -> Self {
        Self {
            min_coefficient: f64::INFINITY,
            max_mass: 0.0,
        }
    }
}

impl RoutingStats {
    fn absorb(&mut self, min_coefficient: f64, max_mass: f64) {
        self.min_coefficient = self.min_coefficient.min(min_coefficient);
        self.max_mass = self.max_mass.max(max_mass);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
    pub routing: RoutingStats,
}

impl Metrics {
    pub const CSV_HEADER: &'static str =
        "fold,epoch,split,loss_margin,loss_recon,loss_total,accuracy,f1";

    /// One `train` row per fold and epoch, a `test` summary row per fold and
    /// a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, fold: &str, epoch: &str, split: &str, v: [f64; 5]| {
            let _ = writeln!(
                out,
                "{fold},{epoch},{split},{:.8},{:.8},{:.8},{:.6},{:.6}",
                v[0], v[1], v[2], v[3], v[4]
            );
        };
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for f in &self.folds {
            for e in &f.epochs {
                let v = [e.loss_margin, e.loss_recon, e.loss_total, e.accuracy, e.f1];
                row(
                    &mut out,
                    &f.fold.to_string(),
                    &e.epoch.to_string(),
                    "train",
                    v,
                );
            }
            let t = &f.test;
            let epoch = f.epochs.len().to_string();
            row(
                &mut out,
                &f.fold.to_string(),
                &epoch,
                "test",
                [t.loss_margin, t.loss_recon, t.loss_total, t.accuracy, t.f1],
            );
        }
        let n = self.folds.len().max(1) as f64;
        let mean =
            |g: fn(&Evaluation) -> f64| self.folds.iter().map(|f| g(&f.test)).sum::<f64>() / n;
        let v = [
            mean(|t| t.loss_margin),
            mean(|t| t.loss_recon),
            mean(|t| t.loss_total),
            self.mean_accuracy,
            self.mean_f1,
        ];
        row(&mut out, "mean", "final", "test", v);
        out
    }
}

/// Result of [`train`]: the last fold's model plus all metrics.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Metrics,
}

fn fold_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct BatchResult {
    grads: ModelParams,
    terms: Vec<LossTerms>,
    predictions: Vec<usize>,
    routing: RoutingStats,
}

/// Graphs per gradient accumulator. Fixed, so the summation order (and
/// therefore every bit of the result) does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Forward/backward over fixed chunks of the batch in parallel; each chunk
/// accumulates in graph order and chunk sums are combined in batch order.
fn batch_gradients(model: &Model, batch: &[&BrainGraph], delta: f64) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let chunks: Vec<BatchResult> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut out = BatchResult {
                grads: model.params().zeros_like(),
                terms: Vec::with_capacity(chunk.len()),
                predictions: Vec::with_capacity(chunk.len()),
                routing: RoutingStats::default(),
            };
            for g in chunk {
                let fwd = model.forward(g)?;
                model.backward(g, &fwd, delta, scale, &mut out.grads)?;
                out.terms.push(fwd.loss);
                out.predictions.push(fwd.prediction);
                out.routing
                    .absorb(fwd.digit.min_coefficient, fwd.digit.max_mass);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut iter = chunks.into_iter();
    let mut total = iter.next().expect("non-empty batch");
    for c in iter {
        total.grads.add_scaled(&c.grads, 1.0);
        total.terms.extend(c.terms);
        total.predictions.extend(c.predictions);
        total
            .routing
            .absorb(c.routing.min_coefficient, c.routing.max_mass);
    }
    Ok(total)
}

/// Trains one model on `train` and reports its held-out scores on `test`.
fn train_fold(
    fold: usize,
    train: &[BrainGraph],
    test: &[BrainGraph],
    n: usize,
    config: &TrainConfig,
    routing: &mut RoutingStats,
) -> Result<(Model, FoldReport)> {
    let mut init = fold_rng(config.seed, 2 * fold as u64);
    let mut shuffle = fold_rng(config.seed, 2 * fold as u64 + 1);
    let mut model = Model::new(config.model_config(n), &mut init)?;
    let mut adam = Adam::new(model.params());
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        if train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let order = shuffled_indices(train.len(), &mut shuffle);
        let mut terms = Vec::with_capacity(train.len());
        let mut predictions = Vec::with_capacity(train.len());
        let mut labels = Vec::with_capacity(train.len());
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&BrainGraph> = chunk.iter().map(|&i| &train[i]).collect();
            let result = batch_gradients(&model, &batch, config.delta)?;
            routing.absorb(result.routing.min_coefficient, result.routing.max_mass);
            model
                .update(|p| adam.step(p, &result.grads, config.learning_rate, config.weight_decay));
            terms.extend(result.terms);
            predictions.extend(result.predictions);
            labels.extend(batch.iter().map(|g| g.label));
        }
        let summary = Evaluation::from_outcomes(
            &terms,
            predictions,
            &labels,
            model.recon_weight(config.delta),
        );
        let record = EpochRecord {
            epoch,
            loss_margin: summary.loss_margin,
            loss_recon: summary.loss_recon,
            loss_total: summary.loss_total,
            accuracy: summary.accuracy,
            f1: summary.f1,
        };
        let loss = record.loss_total;
        epochs.push(record);
        if let Some(patience) = config.patience {
            if loss < best {
                best = loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    let test = evaluate(&model, test, config.delta)?;
    Ok((model, FoldReport { fold, epochs, test }))
}

/// 3-fold cross-validation: each fold trains a fresh model on the other two
/// folds. Deterministic for a given seed.
pub fn train(dataset: &GraphDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    config.model_config(dataset.n()).validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let plan = make_folds(&dataset.labels(), config.seed);
    let mut folds = Vec::with_capacity(NUM_FOLDS);
    let mut routing = RoutingStats::default();
    let mut last = None;
    for fold in 0..NUM_FOLDS {
        let (train_idx, test_idx) = plan.split(fold);
        let (model, report) = train_fold(
            fold,
            &dataset.subset(&train_idx),
            &dataset.subset(&test_idx),
            dataset.n(),
            config,
            &mut routing,
        )?;
        folds.push(report);
        last = Some(model);
    }
    let mean_accuracy = folds.iter().map(|f| f.test.accuracy).sum::<f64>() / folds.len() as f64;
    let mean_f1 = folds.iter().map(|f| f.test.f1).sum::<f64>() / folds.len() as f64;
    Ok(TrainOutcome {
        model: last.expect("three folds"),
        metrics: Metrics {
            folds,
            mean_accuracy,
            mean_f1,
            routing,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};

    #[test]
    fn score_examples() {
        assert_eq!(binary_scores(&[0, 1, 1], &[0, 1, 1]), (1.0, 1.0));
        assert_eq!(binary_scores(&[0, 0, 0], &[0, 1, 1]).1, 0.0);
        let (acc, f1) = binary_scores(&[1, 0, 0, 0], &[1, 1, 0, 0]);
        assert_eq!(acc, 0.75);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                delta: -1.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                capsule_dim: Some(0),
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
        ];
        assert!(bad.iter().all(|c| c.validate().is_err()));
        assert_eq!(TrainConfig::default().model_config(20).capsule_dim, 16);
    }

    fn tiny() -> (GraphDataset, TrainConfig) {
        let spec = SynthSpec {
            n: 8,
            count_per_class: 6,
            motif_size: 3,
            noise_std: 0.0,
            seed: 1,
        };
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            k: 3,
            channels: 2,
            seed: 5,
            ..Default::default()
        };
        (generate_synthetic(&spec).unwrap(), config)
    }

    #[test]
    fn zero_epochs_reports_untrained_metrics() {
        let (data, mut config) = tiny();
        config.epochs = 0;
        let out = train(&data, &config).unwrap();
        assert_eq!(out.metrics.folds.len(), 3);
        for f in &out.metrics.folds {
            assert!(f.epochs.is_empty());
            assert!(f.test.loss_total.is_finite());
        }
        let mean = out
            .metrics
            .folds
            .iter()
            .map(|f| f.test.accuracy)
            .sum::<f64>()
            / 3.0;
        assert!((out.metrics.mean_accuracy - mean).abs() < 1e-15);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, config) = tiny();
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.model.params(), b.model.params());
        let csv = a.metrics.to_csv();
        assert!(csv.starts_with(Metrics::CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + 3 * 3 + 3 + 1);
        assert!(csv.lines().last().unwrap().starts_with("mean,final,test,"));
        assert!(a.metrics.routing.min_coefficient > 0.0 && a.metrics.routing.max_mass < 1.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (data, config) = tiny();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&data, &config).unwrap())
        };
        assert_eq!(run(1).metrics.to_csv(), run(4).metrics.to_csv());
    }

    #[test]
    fn patience_stops_early() {
        let (data, mut config) = tiny();
        config.epochs = 50;
        config.learning_rate = 1e-12;
        config.weight_decay = 0.0;
        config.patience = Some(2);
        let out = train(&data, &config).unwrap();
        assert!(out.metrics.folds.iter().all(|f| f.epochs.len() < 50));
    }

    #[test]
    fn evaluate_rejects_empty_set() {
        let (data, config) = tiny();
        let model = Model::new(config.model_config(8), &mut fold_rng(0, 0)).unwrap();
        assert!(matches!(
            evaluate(&model, &[], 0.0005),
            Err(Error::EmptyEvalSet)
        ));
        assert!(evaluate(&model, data.graphs(), 0.0005).is_ok());
    }
}
