//! Monte Carlo intervention oracle: intervene on a target feature, push the
//! change through the fitted mechanisms and measure how the model output moves.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, UnlearningTarget};
use crate::graph::{CausalGraph, GraphError, PathSet, VariableDecl};
use crate::influence::{FeatureInfluence, PathScore};
use crate::models::{check_schema, ModelError, PredictionModel};
use crate::rng;
use crate::sem::{
    sample_intervention, Contrast, Intervention, InterventionStrategy, SemError, StructuralModel,
    StructuralModelSet,
};

/// Continuous values closer than this count as unchanged during propagation.
pub const CHANGE_TOL: f64 = 1e-12;
const CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("invalid fuzzing configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Average over instances and samples.
    #[default]
    Mean,
    /// Raw sum over instances and samples.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    /// Interventions drawn per (instance, feature) pair.
    pub samples: usize,
    pub strategy: InterventionStrategy,
    /// Per-feature contrasts for the fixed-pair strategy; features without
    /// one use the unit contrast of their domain.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub contrasts: BTreeMap<String, Contrast>,
    pub aggregation: Aggregation,
    pub seed: u64,
    /// Add Gaussian residual noise to recomputed continuous nodes.
    pub stochastic: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            samples: 10,
            strategy: InterventionStrategy::Empirical,
            contrasts: BTreeMap::new(),
            aggregation: Aggregation::Mean,
            seed: 0,
            stochastic: false,
        }
    }
}

/// Score for one feature under a single propagation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScore {
    pub feature: String,
    pub score: f64,
    pub max_abs_change: f64,
    pub mean_abs_change: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuzzMode {
    Total,
    Direct,
}

/// Per-sample output changes for one target instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDeltas {
    pub feature: String,
    /// Position of the instance among the target rows.
    pub instance: usize,
    pub deltas: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Kind<'p> {
    /// Total and direct from the same draws.
    Joint,
    Direct,
    Path(&'p [usize]),
}

impl Kind<'_> {
    fn arms(self) -> usize {
        match self {
            Kind::Joint => 2,
            _ => 1,
        }
    }
}

struct Setup<'a> {
    g: &'a CausalGraph,
    mechanisms: Vec<Option<&'a StructuralModel>>,
    model: &'a dyn PredictionModel,
    rows: Dataset,
    width: usize,
    cfg: &'a FuzzConfig,
    features: Vec<FeatureCtx>,
}

struct FeatureCtx {
    node: usize,
    col: usize,
    decl: VariableDecl,
    support: Vec<f64>,
    contrast: Option<Contrast>,
    /// Feature descendants in topological order.
    descendants: Vec<usize>,
}

fn differs(decl: &VariableDecl, a: f64, b: f64) -> bool {
    if decl.is_categorical() {
        a != b
    } else {
        (a - b).abs() > CHANGE_TOL
    }
}

impl<'a> Setup<'a> {
    fn new(
        g: &'a CausalGraph,
        sem: &'a StructuralModelSet,
        model: &'a dyn PredictionModel,
        ds: &Dataset,
        target: &UnlearningTarget,
        cfg: &'a FuzzConfig,
    ) -> Result<Self, FuzzError> {
        if cfg.samples == 0 {
            return Err(FuzzError::Config("samples per pair must be at least 1".into()));
        }
        check_schema(model, ds.schema())?;
        let table = sem.index_for(g)?;
        let mechanisms = table.iter().map(|k| k.map(|k| &sem.models[k])).collect();
        let bound = target.bind(ds)?;
        let mut columns = bound.columns.clone();
        columns.sort_unstable();
        let mut features = Vec::with_capacity(columns.len());
        for col in columns {
            let node = g.column_node(col);
            let decl = g.node(node).clone();
            let contrast = match cfg.contrasts.get(&decl.name) {
                Some(c) => Some(*c),
                None => Contrast::unit(&decl),
            };
            if cfg.strategy == InterventionStrategy::FixedPair {
                match contrast {
                    Some(c) if c.baseline != c.treatment => {}
                    _ => {
                        return Err(FuzzError::Config(format!(
                            "feature `{}` needs distinct baseline and treatment values",
                            decl.name
                        )))
                    }
                }
            }
            let desc: Vec<usize> = g.descendants_idx(node);
            let descendants = g
                .topo_order_idx()
                .iter()
                .copied()
                .filter(|v| desc.contains(v) && *v != g.outcome())
                .collect();
            features.push(FeatureCtx {
                node,
                col,
                support: ds.column(col),
                decl,
                contrast,
                descendants,
            });
        }
        Ok(Self {
            g,
            mechanisms,
            model,
            width: ds.n_features(),
            rows: bound.rows,
            cfg,
            features,
        })
    }

    fn recompute(&self, v: usize, row: &[f64], noise: Option<&[f64]>) -> f64 {
        let m = self.mechanisms[v].expect("non-root features have mechanisms");
        let parents: Vec<f64> = self
            .g
            .parents_idx(v)
            .iter()
            .map(|&p| row[self.g.feature_column(p).expect("parents are features")])
            .collect();
        m.predict_unchecked(&parents) + noise.map_or(0.0, |n| n[v])
    }

    /// Set `f` to `value` and recompute, in topological order, every
    /// descendant with a changed parent. `f` itself stays pinned.
    fn propagate(&self, f: &FeatureCtx, x: &[f64], value: f64, noise: Option<&[f64]>) -> Vec<f64> {
        let mut out = x.to_vec();
        out[f.col] = value;
        if !differs(&f.decl, value, x[f.col]) {
            return out;
        }
        let mut changed = vec![false; self.g.len()];
        changed[f.node] = true;
        for &v in &f.descendants {
            if !self.g.parents_idx(v).iter().any(|&p| changed[p]) {
                continue;
            }
            let col = self.g.feature_column(v).expect("descendants listed are features");
            let new = self.recompute(v, &out, noise);
            changed[v] = differs(self.g.node(v), new, x[col]);
            out[col] = new;
        }
        out
    }

    /// Push `value` along one directed path only: each path node is
    /// recomputed from its predecessor's new value and every other parent at
    /// its observed value; the model sees only the last node before the
    /// outcome change.
    fn along_path(&self, path: &[usize], x: &[f64], value: f64, noise: Option<&[f64]>) -> Vec<f64> {
        let g = self.g;
        let mut prev = path[0];
        let mut prev_val = value;
        let mut moved = differs(
            g.node(prev),
            value,
            x[g.feature_column(prev).expect("source is a feature")],
        );
        let last = path[path.len() - 2];
        for &v in &path[1..path.len() - 1] {
            if !moved {
                break;
            }
            let col = g.feature_column(v).expect("inner path nodes are features");
            let mut local = x.to_vec();
            local[g.feature_column(prev).expect("path nodes are features")] = prev_val;
            let new = self.recompute(v, &local, noise);
            moved = differs(g.node(v), new, x[col]);
            prev = v;
            prev_val = new;
        }
        let mut out = x.to_vec();
        if moved && prev == last {
            out[g.feature_column(last).expect("path nodes are features")] = prev_val;
        }
        out
    }

    fn draw_noise(&self, f: &FeatureCtx, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        if !self.cfg.stochastic {
            return None;
        }
        let mut noise = vec![0.0; self.g.len()];
        for &v in &f.descendants {
            if let Some(sd) = self.mechanisms[v].and_then(StructuralModel::residual) {
                if sd > 0.0 {
                    noise[v] = Normal::new(0.0, sd).expect("finite sd").sample(rng);
                }
            }
        }
        Some(noise)
    }

    fn build_arm(
        &self,
        f: &FeatureCtx,
        kind: Kind,
        arm: usize,
        x: &[f64],
        value: f64,
        noise: Option<&[f64]>,
    ) -> Vec<f64> {
        match (kind, arm) {
            (Kind::Joint, 0) => self.propagate(f, x, value, noise),
            (Kind::Joint, _) | (Kind::Direct, _) => {
                let mut out = x.to_vec();
                out[f.col] = value;
                out
            }
            (Kind::Path(p), _) => self.along_path(p, x, value, noise),
        }
    }

    /// Per instance, `samples × arms` output changes laid out sample-major.
    fn run(&self, f: &FeatureCtx, kind: Kind) -> Result<Vec<Vec<f64>>, FuzzError> {
        let n = self.rows.n_rows();
        let k = self.cfg.samples;
        let arms = kind.arms();
        let chunks: Vec<usize> = (0..n).step_by(CHUNK).collect();
        let results = chunks
            .par_iter()
            .map(|&start| -> Result<Vec<Vec<f64>>, FuzzError> {
                let end = (start + CHUNK).min(n);
                let mut batch = Vec::with_capacity((end - start) * (1 + 2 * k * arms) * self.width);
                // per (instance, sample, arm): (treatment row, baseline row)
                let mut layout = Vec::with_capacity((end - start) * k * arms);
                let mut rows_in_batch = 0usize;
                let mut push = |batch: &mut Vec<f64>, row: &[f64]| {
                    batch.extend_from_slice(row);
                    rows_in_batch += 1;
                    rows_in_batch - 1
                };
                for i in start..end {
                    let x = self.rows.row(i);
                    let observed = push(&mut batch, x);
                    for s in 0..k {
                        let mut r = rng::stream(self.cfg.seed, &[i as u64, f.col as u64, s as u64]);
                        let Intervention { value, baseline } = sample_intervention(
                            &f.decl,
                            &f.support,
                            x[f.col],
                            self.cfg.strategy,
                            f.contrast,
                            &mut r,
                        )?;
                        let noise = self.draw_noise(f, &mut r);
                        for arm in 0..arms {
                            let t = self.build_arm(f, kind, arm, x, value, noise.as_deref());
                            let t_at = push(&mut batch, &t);
                            let b_at = match baseline {
                                Some(b) => {
                                    let row = self.build_arm(f, kind, arm, x, b, noise.as_deref());
                                    push(&mut batch, &row)
                                }
                                None => observed,
                            };
                            layout.push((t_at, b_at));
                        }
                    }
                }
                let preds = self.model.predict(&batch)?;
                if preds.len() != rows_in_batch {
                    return Err(ModelError::CountMismatch {
                        expected: rows_in_batch,
                        found: preds.len(),
                    }
                    .into());
                }
                if let Some(bad) = preds.iter().position(|p| !p.is_finite()) {
                    return Err(ModelError::NonFinite(bad).into());
                }
                Ok(layout
                    .chunks(k * arms)
                    .map(|inst| inst.iter().map(|&(t, b)| preds[t] - preds[b]).collect())
                    .collect())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(results.into_iter().flatten().collect())
    }

    fn aggregate(&self, sum: f64, count: usize) -> f64 {
        match self.cfg.aggregation {
            Aggregation::Mean => sum / count as f64,
            Aggregation::Sum => sum,
        }
    }

    fn summarize(&self, per_instance: &[Vec<f64>], arms: usize, arm: usize) -> (f64, f64, f64, usize) {
        let mut sum = 0.0;
        let mut abs_sum = 0.0;
        let mut max_abs = 0.0f64;
        let mut count = 0;
        for inst in per_instance {
            for d in inst.iter().skip(arm).step_by(arms) {
                sum += d;
                abs_sum += d.abs();
                max_abs = max_abs.max(d.abs());
                count += 1;
            }
        }
        (self.aggregate(sum, count), max_abs, abs_sum / count as f64, count)
    }
}

/// Total, direct and indirect influence of every target feature, from the
/// same intervention draws.
pub fn fuzz(
    g: &CausalGraph,
    sem: &StructuralModelSet,
    model: &dyn PredictionModel,
    ds: &Dataset,
    target: &UnlearningTarget,
    cfg: &FuzzConfig,
) -> Result<Vec<FeatureInfluence>, FuzzError> {
    let setup = Setup::new(g, sem, model, ds, target, cfg)?;
    let mut out = Vec::with_capacity(setup.features.len());
    for f in &setup.features {
        let per = setup.run(f, Kind::Joint)?;
        let (total, max_abs, mean_abs, count) = setup.summarize(&per, 2, 0);
        let (direct, ..) = setup.summarize(&per, 2, 1);
        let mut fi = FeatureInfluence::new(f.decl.name.clone(), total, direct);
        fi.evaluations = count;
        fi.max_abs_change = Some(max_abs);
        fi.mean_abs_change = Some(mean_abs);
        out.push(fi);
    }
    Ok(out)
}

/// Influence with propagation skipped: only the target feature changes.
pub fn fuzz_direct(
    g: &CausalGraph,
    sem: &StructuralModelSet,
    model: &dyn PredictionModel,
    ds: &Dataset,
    target: &UnlearningTarget,
    cfg: &FuzzConfig,
) -> Result<Vec<ModeScore>, FuzzError> {
    let setup = Setup::new(g, sem, model, ds, target, cfg)?;
    setup
        .features
        .iter()
        .map(|f| {
            let per = setup.run(f, Kind::Direct)?;
            let (score, max_abs_change, mean_abs_change, evaluations) = setup.summarize(&per, 1, 0);
            Ok(ModeScore {
                feature: f.decl.name.clone(),
                score,
                max_abs_change,
                mean_abs_change,
                evaluations,
            })
        })
        .collect()
}

/// Path-specific influence, one score per path. Every path must start at a
/// target feature and end at the outcome.
pub fn fuzz_paths(
    g: &CausalGraph,
    sem: &StructuralModelSet,
    model: &dyn PredictionModel,
    ds: &Dataset,
    target: &UnlearningTarget,
    paths: &PathSet,
    cfg: &FuzzConfig,
) -> Result<Vec<PathScore>, FuzzError> {
    if paths.is_empty() {
        return Err(FuzzError::Config(
            "path-specific mode needs at least one path".into(),
        ));
    }
    let setup = Setup::new(g, sem, model, ds, target, cfg)?;
    let mut out = Vec::with_capacity(paths.len());
    for path in &paths.paths {
        let nodes = g.validate_path(path)?;
        let Some(f) = setup.features.iter().find(|f| f.node == nodes[0]) else {
            return Err(FuzzError::Config(format!(
                "path {} does not start at a target feature",
                path.join("→")
            )));
        };
        let per = setup.run(f, Kind::Path(&nodes))?;
        let (score, max_abs, ..) = setup.summarize(&per, 1, 0);
        out.push(PathScore {
            path: path.clone(),
            score,
            max_abs_change: Some(max_abs),
        });
    }
    Ok(out)
}

/// Every directed path from each target feature to the outcome.
pub fn target_paths(g: &CausalGraph, target: &UnlearningTarget) -> Result<PathSet, FuzzError> {
    let mut paths = Vec::new();
    for f in &target.features {
        paths.extend(g.directed_paths(f)?.paths);
    }
    Ok(PathSet { paths })
}

/// Raw per-instance output changes for inspection.
pub fn fuzz_instances(
    g: &CausalGraph,
    sem: &StructuralModelSet,
    model: &dyn PredictionModel,
    ds: &Dataset,
    target: &UnlearningTarget,
    cfg: &FuzzConfig,
    mode: FuzzMode,
) -> Result<Vec<InstanceDeltas>, FuzzError> {
    let setup = Setup::new(g, sem, model, ds, target, cfg)?;
    let mut out = Vec::new();
    for f in &setup.features {
        let kind = match mode {
            FuzzMode::Total => Kind::Joint,
            FuzzMode::Direct => Kind::Direct,
        };
        let arms = kind.arms();
        for (instance, per) in setup.run(f, kind)?.into_iter().enumerate() {
            out.push(InstanceDeltas {
                feature: f.decl.name.clone(),
                instance,
                deltas: per.into_iter().step_by(arms).collect(),
            });
        }
    }
    Ok(out)
}
