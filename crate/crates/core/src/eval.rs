//! Target-only prediction, classification metrics, ROC/AUC and the
//! cross-validation harness.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{BimodalDataset, FoldPlan};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{train, Algorithm, ChannelSpecs, TrainConfig, TrainedModel};

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub labels: Vec<i8>,
}

/// Score target-modality inputs with the target channel; `score ≥ 0` is the
/// positive class.
pub fn predict(model: &TrainedModel, x_t: &Tensor) -> Result<Prediction> {
    let scores = model.target.forward(x_t)?.scores;
    let labels = scores.iter().map(|&s| if s >= 0.0 { 1 } else { -1 }).collect();
    Ok(Prediction { scores, labels })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub yi: f64,
}

/// ACC, SEN, SPE and Youden index with `+1` as the positive class.
pub fn metrics(pred: &[i8], truth: &[i8]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Contract("no samples to score".into()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p > 0, t > 0) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    if tp + fn_ == 0 {
        return Err(Error::Metric("sensitivity undefined: no positive (+1) samples".into()));
    }
    if tn + fp == 0 {
        return Err(Error::Metric("specificity undefined: no negative (−1) samples".into()));
    }
    let sen = tp as f64 / (tp + fn_) as f64;
    let spe = tn as f64 / (tn + fp) as f64;
    Ok(Metrics {
        acc: (tp + tn) as f64 / truth.len() as f64,
        sen,
        spe,
        yi: sen + spe - 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC over descending unique score thresholds (tied scores share one
/// threshold) and its trapezoidal area. The first point uses a sentinel
/// threshold one above the maximum score.
pub fn roc_auc(scores: &[f64], truth: &[i8]) -> Result<Roc> {
    if scores.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    let pos = truth.iter().filter(|&&t| t > 0).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("ROC needs both classes".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let max = scores[order[0]];
    let mut points = vec![RocPoint {
        threshold: max + 1.0,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if truth[order[i]] > 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(Roc { points, auc })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample standard deviation (divisor `n − 1`; 0 for one value).
pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    // shifted by the first value so constant inputs give an exact mean
    let shift = values.first().copied().unwrap_or(0.0);
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanSd { mean, sd }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    /// Every id the fold's model was trained on (paired and target-only).
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub test_scores: Vec<f64>,
    pub test_labels: Vec<i8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub acc: MeanSd,
    pub sen: MeanSd,
    pub spe: MeanSd,
    pub yi: MeanSd,
    pub auc: MeanSd,
}

impl Aggregate {
    pub fn from_folds(folds: &[FoldResult]) -> Self {
        let col = |f: fn(&FoldResult) -> f64| mean_sd(&folds.iter().map(f).collect::<Vec<_>>());
        Aggregate {
            acc: col(|r| r.metrics.acc),
            sen: col(|r| r.metrics.sen),
            spe: col(|r| r.metrics.spe),
            yi: col(|r| r.metrics.yi),
            auc: col(|r| r.auc),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub aggregate: Aggregate,
    /// ROC of the test scores of all folds pooled together.
    pub pooled_roc: Roc,
}

/// What to train in each fold.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub config: TrainConfig,
    /// `None` picks the default backbones for the dataset's mode.
    pub specs: Option<ChannelSpecs>,
}

/// Dataset restricted to all paired records plus the listed target-only ids.
fn training_subset(ds: &BimodalDataset, keep: &HashSet<usize>) -> BimodalDataset {
    BimodalDataset {
        paired: ds.paired.clone(),
        unpaired: ds
            .unpaired
            .iter()
            .filter(|r| keep.contains(&r.id))
            .cloned()
            .collect(),
        mode: ds.mode,
        dim_s: ds.dim_s,
        dim_t: ds.dim_t,
    }
}

/// Train on all paired data plus the non-test target-only data of each fold,
/// evaluate on the fold's test records.
pub fn cross_validate(ds: &BimodalDataset, plan: &FoldPlan, run: &RunSpec) -> Result<EvalReport> {
    plan.validate(ds)?;
    let specs = run
        .specs
        .clone()
        .unwrap_or_else(|| ChannelSpecs::for_dataset(ds, run.config.feature_dim));
    let mut folds = Vec::with_capacity(plan.k);
    for (f, test_ids) in plan.test_ids.iter().enumerate() {
        let train_unpaired: HashSet<usize> = plan.train_ids(ds, f).into_iter().collect();
        let subset = training_subset(ds, &train_unpaired);
        let model = train(run.algorithm, &subset, &specs, &run.config).map_err(|e| match e {
            e @ (Error::Config { .. } | Error::Spec { .. }) => e,
            e => Error::Training {
                algorithm: run.algorithm.key().to_string(),
                fold: f,
                message: e.to_string(),
            },
        })?;

        let test: HashSet<usize> = test_ids.iter().copied().collect();
        let test_recs: Vec<_> = ds.unpaired.iter().filter(|r| test.contains(&r.id)).collect();
        let x = ds.batch(test_recs.iter().map(|r| r.target.as_slice()), false)?;
        let truth: Vec<i8> = test_recs.iter().map(|r| r.label).collect();
        let pred = predict(&model, &x)?;
        let m = metrics(&pred.labels, &truth)?;
        let roc = roc_auc(&pred.scores, &truth)?;

        let mut train_ids = subset.paired_ids();
        train_ids.extend(subset.unpaired_ids());
        folds.push(FoldResult {
            fold: f,
            metrics: m,
            auc: roc.auc,
            roc: roc.points,
            train_ids,
            test_ids: test_recs.iter().map(|r| r.id).collect(),
            test_scores: pred.scores,
            test_labels: truth,
        });
    }
    let pooled_scores: Vec<f64> = folds.iter().flat_map(|f| f.test_scores.iter().copied()).collect();
    let pooled_labels: Vec<i8> = folds.iter().flat_map(|f| f.test_labels.iter().copied()).collect();
    let pooled_roc = roc_auc(&pooled_scores, &pooled_labels)?;
    Ok(EvalReport {
        algorithm: run.algorithm,
        seed: run.config.seed,
        aggregate: Aggregate::from_folds(&folds),
        folds,
        pooled_roc,
    })
}
