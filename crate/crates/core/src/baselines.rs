//! Reference attributions: permutation importance and group fairness metrics.

use std::io::Read;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Atom, CmpOp, DataError, Dataset, Literal, Predicate};
use crate::graph::Domain;
use crate::linalg;
use crate::models::{binary_labels, check_schema, predict_dataset, ModelError, PredictionModel};
use crate::rng;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("dataset has no outcome column")]
    MissingOutcome,
    #[error("{0} group is empty")]
    EmptyGroup(&'static str),
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error("score file: {0}")]
    ScoreFile(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Negative root mean squared error against the outcome.
    NegRmse,
    /// Share of rows where `output ≥ threshold` matches the binary label.
    Accuracy { threshold: f64 },
}

fn score(metric: Metric, outputs: &[f64], y: &[f64]) -> f64 {
    match metric {
        Metric::NegRmse => {
            let mse = outputs.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64;
            -mse.sqrt()
        }
        Metric::Accuracy { threshold } => {
            let hits = outputs
                .iter()
                .zip(y)
                .filter(|(p, t)| f64::from(u8::from(**p >= threshold)) == **t)
                .count();
            hits as f64 / y.len() as f64
        }
    }
}

fn targets(ds: &Dataset, metric: Metric) -> Result<Vec<f64>, BaselineError> {
    if !ds.has_outcome() {
        return Err(BaselineError::MissingOutcome);
    }
    Ok(match metric {
        Metric::NegRmse => ds.outcome()?,
        Metric::Accuracy { .. } => binary_labels(ds)?,
    })
}

/// Drop in `metric` when one column is shuffled, averaged over `repeats`
/// shuffles. Shuffle `r` of column `c` is keyed by `(seed, c, r)`.
pub fn permutation_importance(
    ds: &Dataset,
    model: &dyn PredictionModel,
    feature: &str,
    metric: Metric,
    seed: u64,
    repeats: usize,
) -> Result<f64, BaselineError> {
    check_schema(model, ds.schema())?;
    let col = ds
        .schema()
        .position(feature)
        .ok_or_else(|| DataError::UnknownFeature(feature.to_string()))?;
    let y = targets(ds, metric)?;
    let base = score(metric, &predict_dataset(model, ds)?, &y);
    importance_with_base(ds, model, col, metric, seed, repeats, base, &y)
}

#[allow(clippy::too_many_arguments)]
fn importance_with_base(
    ds: &Dataset,
    model: &dyn PredictionModel,
    col: usize,
    metric: Metric,
    seed: u64,
    repeats: usize,
    base: f64,
    y: &[f64],
) -> Result<f64, BaselineError> {
    if repeats == 0 {
        return Err(BaselineError::NoRepeats);
    }
    let original = ds.column(col);
    let mut drops = 0.0;
    for r in 0..repeats {
        let mut shuffled = original.clone();
        shuffled.shuffle(&mut rng::stream(seed, &[col as u64, r as u64]));
        let outputs = predict_dataset(model, &ds.with_column(col, &shuffled))?;
        drops += base - score(metric, &outputs, y);
    }
    Ok(drops / repeats as f64)
}

/// Permutation importance of every feature, in schema order.
pub fn permutation_importances(
    ds: &Dataset,
    model: &dyn PredictionModel,
    metric: Metric,
    seed: u64,
    repeats: usize,
) -> Result<Vec<(String, f64)>, BaselineError> {
    check_schema(model, ds.schema())?;
    let y = targets(ds, metric)?;
    let base = score(metric, &predict_dataset(model, ds)?, &y);
    ds.schema()
        .feature_names()
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            importance_with_base(ds, model, c, metric, seed, repeats, base, &y).map(|v| (name, v))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    /// Predicate defining the privileged group; everyone else is unprivileged.
    pub privileged: String,
    /// A prediction counts as positive when the output is at least this.
    pub threshold: f64,
    /// How ground-truth labels were formed, if any.
    pub labels: Option<String>,
    pub privileged_rows: usize,
    pub unprivileged_rows: usize,
    /// P(ŷ=1 | unprivileged) − P(ŷ=1 | privileged).
    pub spd: f64,
    /// P(ŷ=1 | unprivileged) / P(ŷ=1 | privileged); `None` with
    /// `di_infinite` set when the privileged rate is zero.
    pub di: Option<f64>,
    pub di_infinite: bool,
    /// TPR difference (unprivileged − privileged); needs labels.
    pub eod: Option<f64>,
    /// Mean of FPR and TPR differences; needs labels.
    pub aod: Option<f64>,
}

struct Rates {
    positive: f64,
    tpr: Option<f64>,
    fpr: Option<f64>,
}

fn rates(rows: &[usize], yhat: &[bool], labels: Option<&[bool]>) -> Rates {
    let pos = rows.iter().filter(|&&i| yhat[i]).count();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let (tpr, fpr) = match labels {
        Some(l) => {
            let actual_pos = rows.iter().filter(|&&i| l[i]).count();
            let tp = rows.iter().filter(|&&i| l[i] && yhat[i]).count();
            let fp = rows.iter().filter(|&&i| !l[i] && yhat[i]).count();
            (ratio(tp, actual_pos), ratio(fp, rows.len() - actual_pos))
        }
        None => (None, None),
    };
    Rates {
        positive: pos as f64 / rows.len() as f64,
        tpr,
        fpr,
    }
}

/// The four group metrics; see [`FairnessReport`] for definitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetrics {
    pub spd: f64,
    pub di: Option<f64>,
    pub di_infinite: bool,
    pub eod: Option<f64>,
    pub aod: Option<f64>,
}

/// Group metrics from precomputed predictions, labels and membership.
pub fn fairness_from_groups(
    yhat: &[bool],
    labels: Option<&[bool]>,
    privileged: &[bool],
) -> Result<GroupMetrics, BaselineError> {
    let priv_rows: Vec<usize> = (0..yhat.len()).filter(|&i| privileged[i]).collect();
    let unpriv_rows: Vec<usize> = (0..yhat.len()).filter(|&i| !privileged[i]).collect();
    if priv_rows.is_empty() {
        return Err(BaselineError::EmptyGroup("privileged"));
    }
    if unpriv_rows.is_empty() {
        return Err(BaselineError::EmptyGroup("unprivileged"));
    }
    let p = rates(&priv_rows, yhat, labels);
    let u = rates(&unpriv_rows, yhat, labels);
    let spd = u.positive - p.positive;
    let (di, di_infinite) = if p.positive > 0.0 {
        (Some(u.positive / p.positive), false)
    } else {
        (None, true)
    };
    let eod = u.tpr.zip(p.tpr).map(|(a, b)| a - b);
    let fpr_diff = u.fpr.zip(p.fpr).map(|(a, b)| a - b);
    let aod = eod.zip(fpr_diff).map(|(t, f)| 0.5 * (f + t));
    Ok(GroupMetrics {
        spd,
        di,
        di_infinite,
        eod,
        aod,
    })
}

/// How to turn outcomes into labels for the error-rate metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelRule {
    /// Binary outcome column used as is.
    Binary,
    /// Continuous outcome; positive when at least the given value.
    AtLeast(f64),
}

/// SPD, DI, EOD and AOD with `privileged` selecting the privileged group.
pub fn fairness_metrics(
    ds: &Dataset,
    model: &dyn PredictionModel,
    privileged: &Predicate,
    threshold: f64,
    labels: Option<LabelRule>,
) -> Result<FairnessReport, BaselineError> {
    check_schema(model, ds.schema())?;
    let outputs = predict_dataset(model, ds)?;
    let bound = privileged.bind(ds.schema())?;
    let member: Vec<bool> = ds.rows().map(|r| bound.matches(r)).collect();
    let yhat: Vec<bool> = outputs.iter().map(|&o| o >= threshold).collect();
    let (label_values, label_note) = match labels {
        None => (None, None),
        Some(LabelRule::Binary) => {
            let l = binary_labels(ds)?;
            (
                Some(l.iter().map(|&v| v == 1.0).collect::<Vec<_>>()),
                Some("binary outcome".to_string()),
            )
        }
        Some(LabelRule::AtLeast(t)) => {
            let y = ds.outcome().map_err(|_| BaselineError::MissingOutcome)?;
            (
                Some(y.iter().map(|&v| v >= t).collect()),
                Some(format!("outcome >= {t}")),
            )
        }
    };
    let m = fairness_from_groups(&yhat, label_values.as_deref(), &member)?;
    let privileged_rows = member.iter().filter(|&&m| m).count();
    Ok(FairnessReport {
        privileged: privileged.to_string(),
        threshold,
        labels: label_note,
        privileged_rows,
        unprivileged_rows: member.len() - privileged_rows,
        spd: m.spd,
        di: m.di,
        di_infinite: m.di_infinite,
        eod: m.eod,
        aod: m.aod,
    })
}

/// Privileged-group predicate used when a feature is treated as protected:
/// the second category of a binary feature, the last category of a wider
/// one, or values above the median for continuous features.
pub fn default_privileged(ds: &Dataset, feature: &str) -> Result<Predicate, BaselineError> {
    let col = ds
        .schema()
        .position(feature)
        .ok_or_else(|| DataError::UnknownFeature(feature.to_string()))?;
    let decl = &ds.schema().features()[col];
    let atom = match &decl.domain {
        Domain::Categorical { values } => Atom {
            feature: feature.to_string(),
            op: CmpOp::Eq,
            literal: Literal::Token(values[if values.len() == 2 { 1 } else { values.len() - 1 }].clone()),
        },
        Domain::Continuous { .. } => Atom {
            feature: feature.to_string(),
            op: CmpOp::Gt,
            literal: Literal::Number(linalg::median(&ds.column(col))),
        },
    };
    Ok(Predicate { atoms: vec![atom] })
}

/// Fairness metrics with each feature in turn treated as protected.
/// Features whose split leaves a group empty are skipped.
pub fn fairness_by_feature(
    ds: &Dataset,
    model: &dyn PredictionModel,
    threshold: f64,
    labels: Option<LabelRule>,
) -> Result<Vec<(String, FairnessReport)>, BaselineError> {
    let mut out = Vec::new();
    for name in ds.schema().feature_names() {
        let p = default_privileged(ds, &name)?;
        match fairness_metrics(ds, model, &p, threshold, labels) {
            Ok(r) => out.push((name, r)),
            Err(BaselineError::EmptyGroup(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Read external `(feature, score)` rows from a CSV with a header.
pub fn read_scores<R: Read>(reader: R) -> Result<Vec<(String, f64)>, BaselineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| BaselineError::ScoreFile(e.to_string()))?
        .clone();
    if header.len() != 2 || &header[0] != "feature" || &header[1] != "score" {
        return Err(BaselineError::ScoreFile(format!(
            "expected header `feature,score`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| BaselineError::ScoreFile(e.to_string()))?;
        let value: f64 = rec[1].parse().map_err(|_| {
            BaselineError::ScoreFile(format!("line {}: `{}` is not a number", i + 2, &rec[1]))
        })?;
        if !value.is_finite() {
            return Err(BaselineError::ScoreFile(format!(
                "line {}: score is not finite",
                i + 2
            )));
        }
        out.push((rec[0].to_string(), value));
    }
    Ok(out)
}
