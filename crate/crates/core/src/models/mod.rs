//! The prediction-only model boundary, built-in trainable models and
//! retraining-based unlearning.

mod external;
mod mlp;
mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Schema, UnlearningTarget};
use crate::graph::Domain;
use crate::linalg::{self, Design, LinearFit};

pub use external::{serve, ExternalModel, DEFAULT_TIMEOUT, MAX_BATCH_ROWS};
pub use mlp::Network;
pub use tree::Forest;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model expects features {expected:?}, dataset has {found:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("batch of {len} values is not a whole number of {width}-wide rows")]
    BatchShape { len: usize, width: usize },
    #[error("model returned {found} predictions for {expected} rows")]
    CountMismatch { expected: usize, found: usize },
    #[error("model returned a non-finite prediction at row {0}")]
    NonFinite(usize),
    #[error("training needs at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("training data has no outcome column")]
    MissingOutcome,
    #[error("outcome `{0}` is not numeric")]
    NonNumericOutcome(String),
    #[error("outcome `{0}` is not binary; logistic models need 0/1 labels")]
    NonBinaryOutcome(String),
    #[error("no input features left to train on")]
    NoFeatures,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unlearning target is empty: {0}")]
    EmptyTarget(String),
    #[error("every training row is in the forget set")]
    NoRowsLeft,
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("unknown model kind `{0}` (expected linear, logistic, tree-ensemble or network)")]
    UnknownKind(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("model process exited: {0}")]
    SubprocessExit(String),
    #[error("model did not answer within {0:?}")]
    Timeout(Duration),
    #[error("{0}")]
    Io(String),
}

/// Black-box access to a trained model: predictions only.
pub trait PredictionModel: Send + Sync {
    /// Input columns, in the order rows must be supplied.
    fn feature_names(&self) -> &[String];

    /// Predict a row-major batch with `feature_names().len()` values per row.
    fn predict(&self, rows: &[f64]) -> Result<Vec<f64>, ModelError>;
}

/// Fail unless `model` reads exactly the columns of `schema`, in order.
pub fn check_schema(model: &dyn PredictionModel, schema: &Schema) -> Result<(), ModelError> {
    let found = schema.feature_names();
    if model.feature_names() != found.as_slice() {
        return Err(ModelError::SchemaMismatch {
            expected: model.feature_names().to_vec(),
            found,
        });
    }
    Ok(())
}

/// Predict every row of `ds`.
pub fn predict_dataset(model: &dyn PredictionModel, ds: &Dataset) -> Result<Vec<f64>, ModelError> {
    let mut flat = Vec::with_capacity(ds.n_rows() * ds.n_features());
    for row in ds.rows() {
        flat.extend_from_slice(row);
    }
    let out = model.predict(&flat)?;
    if out.len() != ds.n_rows() {
        return Err(ModelError::CountMismatch {
            expected: ds.n_rows(),
            found: out.len(),
        });
    }
    Ok(out)
}

fn rows_in(len: usize, width: usize) -> Result<usize, ModelError> {
    if width == 0 || !len.is_multiple_of(width) {
        return Err(ModelError::BatchShape { len, width });
    }
    Ok(len / width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    Logistic,
    TreeEnsemble,
    Network,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Linear,
        ModelKind::Logistic,
        ModelKind::TreeEnsemble,
        ModelKind::Network,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Logistic => "logistic",
            ModelKind::TreeEnsemble => "tree-ensemble",
            ModelKind::Network => "network",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "logistic" => Ok(ModelKind::Logistic),
            "tree-ensemble" | "forest" => Ok(ModelKind::TreeEnsemble),
            "network" | "mlp" => Ok(ModelKind::Network),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub trees: usize,
    pub depth: usize,
    pub min_leaf: usize,
    pub hidden: usize,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            trees: 50,
            depth: 6,
            min_leaf: 5,
            hidden: 16,
            iterations: 500,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Params {
    Linear(LinearFit),
    /// Outputs the probability of the positive class.
    Logistic(LinearFit),
    TreeEnsemble(Forest),
    Network(Network),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinModel {
    features: Vec<String>,
    /// Columns (into `features`) the model reads; all others are ignored.
    used: Vec<usize>,
    params: Params,
}

impl BuiltinModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            Params::Linear(_) => ModelKind::Linear,
            Params::Logistic(_) => ModelKind::Logistic,
            Params::TreeEnsemble(_) => ModelKind::TreeEnsemble,
            Params::Network(_) => ModelKind::Network,
        }
    }

    /// Names of the columns the model actually reads.
    pub fn used_features(&self) -> Vec<&str> {
        self.used.iter().map(|&c| self.features[c].as_str()).collect()
    }

    /// Linear coefficients over [`Self::used_features`], for linear kinds.
    pub fn linear_coefficients(&self) -> Option<&LinearFit> {
        match &self.params {
            Params::Linear(fit) | Params::Logistic(fit) => Some(fit),
            _ => None,
        }
    }

    fn predict_used(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Linear(fit) => fit.predict(x),
            Params::Logistic(fit) => linalg::sigmoid(fit.predict(x)),
            Params::TreeEnsemble(forest) => forest.predict(x),
            Params::Network(net) => net.predict(x),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("models serialize")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(text).map_err(|e| ModelError::Io(e.to_string()))?;
        if m.used.iter().any(|&c| c >= m.features.len()) {
            return Err(ModelError::Io("used column out of range".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json_pretty()).map_err(|e| ModelError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| ModelError::Io(format!("{}: {e}", p.display())))?;
        Self::from_json_str(&text)
    }
}

impl PredictionModel for BuiltinModel {
    fn feature_names(&self) -> &[String] {
        &self.features
    }

    fn predict(&self, rows: &[f64]) -> Result<Vec<f64>, ModelError> {
        let width = self.features.len();
        let n = rows_in(rows.len(), width)?;
        let mut x = vec![0.0; self.used.len()];
        let mut out = Vec::with_capacity(n);
        for (i, row) in rows.chunks_exact(width).enumerate() {
            for (slot, &c) in x.iter_mut().zip(&self.used) {
                *slot = row[c];
            }
            let y = self.predict_used(&x);
            if !y.is_finite() {
                return Err(ModelError::NonFinite(i));
            }
            out.push(y);
        }
        Ok(out)
    }
}

/// Outcome values as 0/1 labels: the second category of a binary
/// categorical outcome, or a numeric outcome that only takes 0 and 1.
pub fn binary_labels(ds: &Dataset) -> Result<Vec<f64>, ModelError> {
    let y = ds.outcome().map_err(|_| ModelError::MissingOutcome)?;
    let decl = ds.schema().outcome();
    if let Domain::Categorical { values } = &decl.domain {
        if values.len() == 2 {
            let positive = decl.codes()[1];
            return Ok(y.iter().map(|&v| f64::from(u8::from(v == positive))).collect());
        }
    }
    if y.iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(y)
    } else {
        Err(ModelError::NonBinaryOutcome(decl.name.clone()))
    }
}

/// Train a built-in model on `ds` reading only `used_features`.
pub fn train(
    kind: ModelKind,
    ds: &Dataset,
    used_features: &[String],
    hp: &Hyperparams,
    seed: u64,
) -> Result<BuiltinModel, ModelError> {
    if used_features.is_empty() {
        return Err(ModelError::NoFeatures);
    }
    let schema = ds.schema();
    let mut used = Vec::with_capacity(used_features.len());
    for name in used_features {
        let c = schema
            .position(name)
            .ok_or_else(|| ModelError::UnknownFeature(name.clone()))?;
        if !used.contains(&c) {
            used.push(c);
        }
    }
    used.sort_unstable();
    let needed = used.len() + 2;
    if ds.n_rows() < needed {
        return Err(ModelError::TooFewRows {
            needed,
            found: ds.n_rows(),
        });
    }
    let y = match kind {
        ModelKind::Logistic => binary_labels(ds)?,
        _ => {
            let decl = schema.outcome();
            if decl.is_categorical() && !decl.has_numeric_codes() {
                return Err(ModelError::NonNumericOutcome(decl.name.clone()));
            }
            ds.outcome().map_err(|_| ModelError::MissingOutcome)?
        }
    };
    let mut x = Design::with_capacity(used.len(), ds.n_rows());
    let mut buf = vec![0.0; used.len()];
    for row in ds.rows() {
        for (b, &c) in buf.iter_mut().zip(&used) {
            *b = row[c];
        }
        x.push(&buf);
    }
    let failed = || ModelError::FitFailed(format!("{kind} design is not finite"));
    let params = match kind {
        ModelKind::Linear => Params::Linear(linalg::least_squares(&x, &y).ok_or_else(failed)?),
        ModelKind::Logistic => Params::Logistic(linalg::logistic_irls(&x, &y).ok_or_else(failed)?.linear),
        ModelKind::TreeEnsemble => Params::TreeEnsemble(Forest::fit(&x, &y, hp, seed)),
        ModelKind::Network => Params::Network(Network::fit(&x, &y, hp, seed)),
    };
    Ok(BuiltinModel {
        features: schema.feature_names(),
        used,
        params,
    })
}

/// What retraining forgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnlearningMode {
    /// Drop the target features from the model input.
    #[default]
    Features,
    /// Drop the rows matched by the target selector from training.
    Rows,
    Both,
}

/// Retrain `kind` as if the target had never been seen.
pub fn simulate_unlearning(
    kind: ModelKind,
    ds: &Dataset,
    target: &UnlearningTarget,
    mode: UnlearningMode,
    hp: &Hyperparams,
    seed: u64,
) -> Result<BuiltinModel, ModelError> {
    if target.features.is_empty() {
        return Err(ModelError::EmptyTarget("no features".into()));
    }
    let schema = ds.schema();
    for f in &target.features {
        if schema.position(f).is_none() {
            return Err(ModelError::UnknownFeature(f.clone()));
        }
    }
    let mut used = schema.feature_names();
    if matches!(mode, UnlearningMode::Features | UnlearningMode::Both) {
        used.retain(|name| !target.features.contains(name));
    }
    let train_rows = if matches!(mode, UnlearningMode::Rows | UnlearningMode::Both) {
        let bound = target
            .selector
            .bind(schema)
            .map_err(|e| ModelError::EmptyTarget(e.to_string()))?;
        let keep: Vec<usize> = (0..ds.n_rows()).filter(|&i| !bound.matches(ds.row(i))).collect();
        if keep.len() == ds.n_rows() {
            return Err(ModelError::EmptyTarget(target.selector.to_string()));
        }
        if keep.is_empty() {
            return Err(ModelError::NoRowsLeft);
        }
        ds.subset(&keep)
    } else {
        ds.clone()
    };
    train(kind, &train_rows, &used, hp, seed)
}
