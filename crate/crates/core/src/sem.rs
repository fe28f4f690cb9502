//! Per-node mechanisms fitted from observational data and used to push an
//! intervention through the graph.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::graph::{CausalGraph, Domain, VariableDecl};
use crate::linalg::{self, Design};

/// Grid resolution for continuous features under [`InterventionStrategy::DomainGrid`].
pub const GRID_POINTS: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemError {
    #[error("node `{node}` needs at least {needed} rows to fit, dataset has {found}")]
    TooFewRows {
        node: String,
        needed: usize,
        found: usize,
    },
    #[error("fit for node `{0}` failed (non-finite design)")]
    FitFailed(String),
    #[error("`{node}` expects {expected} parent values, got {found}")]
    ArityMismatch {
        node: String,
        expected: usize,
        found: usize,
    },
    #[error("no observed values to sample an intervention for `{0}`")]
    EmptySupport(String),
    #[error("structural model set does not match the graph: {0}")]
    GraphMismatch(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum Mechanism {
    LinearRegression {
        intercept: f64,
        coefficients: Vec<f64>,
        residual: f64,
    },
    /// One-vs-rest logits; `weights[k]` is `[intercept, coef...]` for `classes[k]`.
    MultinomialLogit {
        classes: Vec<f64>,
        weights: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralModel {
    pub node: String,
    /// Graph parents of `node`, declaration order.
    pub parents: Vec<String>,
    #[serde(flatten)]
    pub mechanism: Mechanism,
    /// Set when the design was rank deficient and a ridge penalty was applied.
    #[serde(default)]
    pub ridge_fallback: bool,
}

impl StructuralModel {
    /// Mean prediction for the given parent values (no noise).
    pub fn predict(&self, parents: &[f64]) -> Result<f64, SemError> {
        if parents.len() != self.parents.len() {
            return Err(SemError::ArityMismatch {
                node: self.node.clone(),
                expected: self.parents.len(),
                found: parents.len(),
            });
        }
        Ok(self.predict_unchecked(parents))
    }

    pub(crate) fn predict_unchecked(&self, parents: &[f64]) -> f64 {
        match &self.mechanism {
            Mechanism::LinearRegression {
                intercept,
                coefficients,
                ..
            } => intercept + coefficients.iter().zip(parents).map(|(b, x)| b * x).sum::<f64>(),
            Mechanism::MultinomialLogit { classes, weights } => {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for (k, w) in weights.iter().enumerate() {
                    let s = w[0] + w[1..].iter().zip(parents).map(|(b, x)| b * x).sum::<f64>();
                    // strict comparison keeps the earliest class on ties
                    if s > best_score {
                        best = k;
                        best_score = s;
                    }
                }
                classes[best]
            }
        }
    }

    /// Residual standard deviation for continuous mechanisms.
    pub fn residual(&self) -> Option<f64> {
        match self.mechanism {
            Mechanism::LinearRegression { residual, .. } => Some(residual),
            Mechanism::MultinomialLogit { .. } => None,
        }
    }
}

/// Predict `m` at the given parent values.
pub fn predict_node(m: &StructuralModel, parents: &[f64]) -> Result<f64, SemError> {
    m.predict(parents)
}

/// One mechanism per non-root feature node, in topological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralModelSet {
    pub models: Vec<StructuralModel>,
}

impl StructuralModelSet {
    pub fn get(&self, node: &str) -> Option<&StructuralModel> {
        self.models.iter().find(|m| m.node == node)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn any_ridge(&self) -> bool {
        self.models.iter().any(|m| m.ridge_fallback)
    }

    /// Check coverage against `g` and return, per node, the model index.
    pub fn index_for(&self, g: &CausalGraph) -> Result<Vec<Option<usize>>, SemError> {
        let mut table = vec![None; g.len()];
        for (k, m) in self.models.iter().enumerate() {
            let v = g
                .index_of(&m.node)
                .map_err(|e| SemError::GraphMismatch(e.to_string()))?;
            if v == g.outcome() {
                continue;
            }
            let expected: Vec<String> = g.parents(&m.node).unwrap_or_default();
            if expected != m.parents {
                return Err(SemError::GraphMismatch(format!(
                    "`{}` has parents {:?} in the graph but {:?} in the model",
                    m.node, expected, m.parents
                )));
            }
            table[v] = Some(k);
        }
        for v in g.feature_nodes() {
            let root = g.parents_idx(v).is_empty();
            if !root && table[v].is_none() {
                return Err(SemError::GraphMismatch(format!(
                    "no mechanism for non-root node `{}`",
                    g.name(v)
                )));
            }
        }
        Ok(table)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("structural models serialize")
    }

    pub fn from_json_str(text: &str) -> Result<Self, SemError> {
        serde_json::from_str(text).map_err(|e| SemError::Io(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SemError> {
        std::fs::write(path, self.to_json_pretty()).map_err(|e| SemError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SemError> {
        let text = std::fs::read_to_string(path).map_err(|e| SemError::Io(e.to_string()))?;
        Self::from_json_str(&text)
    }
}

/// Fit one mechanism for every non-root feature node of `g`.
///
/// Continuous nodes get ordinary least squares on their parents, categorical
/// nodes a one-vs-rest logit per class.
pub fn fit_sem(g: &CausalGraph, ds: &Dataset) -> Result<StructuralModelSet, SemError> {
    let targets: Vec<usize> = g
        .topo_order_idx()
        .iter()
        .copied()
        .filter(|&v| v != g.outcome() && !g.parents_idx(v).is_empty())
        .collect();
    let models = targets
        .par_iter()
        .map(|&v| fit_node(g, ds, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StructuralModelSet { models })
}

fn fit_node(g: &CausalGraph, ds: &Dataset, v: usize) -> Result<StructuralModel, SemError> {
    let decl = g.node(v);
    let parent_nodes = g.parents_idx(v);
    let needed = parent_nodes.len() + 2;
    if ds.n_rows() < needed {
        return Err(SemError::TooFewRows {
            node: decl.name.clone(),
            needed,
            found: ds.n_rows(),
        });
    }
    let cols: Vec<usize> = parent_nodes
        .iter()
        .map(|&p| g.feature_column(p).expect("parents are features"))
        .collect();
    let target_col = g.feature_column(v).expect("fitted nodes are features");

    let mut x = Design::with_capacity(cols.len(), ds.n_rows());
    let mut buf = vec![0.0; cols.len()];
    let mut y = Vec::with_capacity(ds.n_rows());
    for row in ds.rows() {
        for (b, &c) in buf.iter_mut().zip(&cols) {
            *b = row[c];
        }
        x.push(&buf);
        y.push(row[target_col]);
    }
    let failed = || SemError::FitFailed(decl.name.clone());

    let (mechanism, ridge) = match &decl.domain {
        Domain::Continuous { .. } => {
            let fit = linalg::least_squares(&x, &y).ok_or_else(failed)?;
            let ssr: f64 = (0..x.n)
                .map(|i| {
                    let r = y[i] - fit.predict(x.row(i));
                    r * r
                })
                .sum();
            let dof = (x.n - cols.len() - 1).max(1);
            (
                Mechanism::LinearRegression {
                    intercept: fit.intercept,
                    coefficients: fit.coef,
                    residual: (ssr / dof as f64).sqrt(),
                },
                fit.ridge,
            )
        }
        Domain::Categorical { .. } => {
            let classes = decl.codes();
            let mut weights = Vec::with_capacity(classes.len());
            let mut ridge = false;
            for &c in &classes {
                let labels: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v == c))).collect();
                let fit = linalg::logistic_irls(&x, &labels).ok_or_else(failed)?;
                ridge |= fit.linear.ridge;
                let mut w = vec![fit.linear.intercept];
                w.extend(fit.linear.coef);
                weights.push(w);
            }
            (Mechanism::MultinomialLogit { classes, weights }, ridge)
        }
    };
    Ok(StructuralModel {
        node: decl.name.clone(),
        parents: parent_nodes.iter().map(|&p| g.name(p).to_string()).collect(),
        mechanism,
        ridge_fallback: ridge,
    })
}

/// Baseline and treatment values for a two-arm contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub baseline: f64,
    pub treatment: f64,
}

impl Contrast {
    pub fn new(baseline: f64, treatment: f64) -> Self {
        Self { baseline, treatment }
    }

    /// Unit contrast: the first two categories, or `lo -> lo + 1` on a
    /// continuous range. `None` for single-level categories.
    pub fn unit(decl: &VariableDecl) -> Option<Self> {
        match &decl.domain {
            Domain::Categorical { .. } => {
                let codes = decl.codes();
                (codes.len() >= 2).then(|| Self::new(codes[0], codes[1]))
            }
            Domain::Continuous { range: [lo, _] } => Some(Self::new(*lo, lo + 1.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterventionStrategy {
    /// Uniform draw from the feature's observed values.
    #[default]
    Empirical,
    /// Uniform draw from an evenly spaced grid over the declared domain.
    DomainGrid,
    /// Compare a fixed treatment value against a fixed baseline value.
    FixedPair,
    /// The instance's own value (consistency check; every change is zero).
    Observed,
}

/// A sampled intervention. `baseline` is set for fixed-pair contrasts, where
/// the reference arm is itself an intervention rather than the observed row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intervention {
    pub value: f64,
    pub baseline: Option<f64>,
}

/// Evenly spaced values over `Dom(decl)`: every category, or
/// [`GRID_POINTS`] points spanning a continuous range.
pub fn domain_grid(decl: &VariableDecl) -> Vec<f64> {
    match &decl.domain {
        Domain::Categorical { .. } => decl.codes(),
        Domain::Continuous { range: [lo, hi] } => {
            let k = GRID_POINTS;
            (0..k)
                .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
                .collect()
        }
    }
}

/// Draw `θ_f` for one (instance, feature) pair.
///
/// `support` is the observed column (for the empirical strategy), `current`
/// the instance's own value, `contrast` the fixed pair when one applies.
pub fn sample_intervention<R: Rng + ?Sized>(
    decl: &VariableDecl,
    support: &[f64],
    current: f64,
    strategy: InterventionStrategy,
    contrast: Option<Contrast>,
    rng: &mut R,
) -> Result<Intervention, SemError> {
    let plain = |value| Intervention {
        value,
        baseline: None,
    };
    match strategy {
        InterventionStrategy::Empirical => {
            if support.is_empty() {
                return Err(SemError::EmptySupport(decl.name.clone()));
            }
            Ok(plain(support[rng.random_range(0..support.len())]))
        }
        InterventionStrategy::DomainGrid => {
            let grid = domain_grid(decl);
            Ok(plain(grid[rng.random_range(0..grid.len())]))
        }
        InterventionStrategy::FixedPair => {
            let c = contrast
                .or_else(|| Contrast::unit(decl))
                .ok_or_else(|| SemError::EmptySupport(decl.name.clone()))?;
            Ok(Intervention {
                value: c.treatment,
                baseline: Some(c.baseline),
            })
        }
        InterventionStrategy::Observed => Ok(plain(current)),
    }
}
