//! Sensitivity harnesses: graph perturbation with rank-change measurement,
//! a model-architecture sweep and a wall-time benchmark.

use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{permutation_importance, BaselineError, Metric};
use crate::cafe::{cafe_estimate, CafeConfig, CafeError, CafeResult};
use crate::data::{Dataset, UnlearningTarget};
use crate::fuzz::{fuzz, FuzzConfig, FuzzError};
use crate::graph::{CausalGraph, GraphError};
use crate::influence::RankEntry;
use crate::linalg;
use crate::models::{
    simulate_unlearning, Hyperparams, ModelError, ModelKind, PredictionModel, UnlearningMode,
};
use crate::rng;
use crate::sem::{fit_sem, SemError};

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error("invalid perturbation: {0}")]
    Perturbation(String),
    #[error("no absent forward edge left to add; the graph is already complete")]
    Complete,
    #[error("graphs have different node sets")]
    NodeMismatch,
    #[error("benchmark needs at least 3 repeats, got {0}")]
    TooFewRepeats(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cafe(#[from] CafeError),
    #[error(transparent)]
    Fuzz(#[from] FuzzError),
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "fraction")]
pub enum Perturbation {
    AddEdges(f64),
    RemoveEdges(f64),
    FullyConnect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub perturbation: Perturbation,
    pub seed: u64,
}

fn edge_budget(fraction: f64, edges: usize) -> Result<usize, RobustnessError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(RobustnessError::Perturbation(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    Ok(((fraction * edges as f64).ceil() as usize).max(1))
}

/// Forward pairs in topological order; the outcome is always a sink so it
/// only ever appears as a child.
fn forward_pairs(g: &CausalGraph) -> Vec<(String, String)> {
    let order: Vec<usize> = g
        .topo_order_idx()
        .iter()
        .copied()
        .filter(|&v| v != g.outcome())
        .chain(std::iter::once(g.outcome()))
        .collect();
    let mut pairs = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            pairs.push((g.name(a).to_string(), g.name(b).to_string()));
        }
    }
    pairs
}

/// Add, remove or complete edges. Added edges always point forward in a
/// fixed topological order, so the result stays acyclic.
pub fn perturb_graph(g: &CausalGraph, spec: &PerturbationSpec) -> Result<CausalGraph, RobustnessError> {
    let mut edges: Vec<(String, String)> = g.edges().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    let mut rng = rng::stream(spec.seed, &[]);
    match spec.perturbation {
        Perturbation::FullyConnect => {
            edges = forward_pairs(g);
        }
        Perturbation::AddEdges(fraction) => {
            let budget = edge_budget(fraction, edges.len())?;
            let present = g.edge_set();
            let absent: Vec<(String, String)> = forward_pairs(g)
                .into_iter()
                .filter(|e| !present.contains(e))
                .collect();
            if absent.is_empty() {
                return Err(RobustnessError::Complete);
            }
            let k = budget.min(absent.len());
            edges.extend(absent.choose_multiple(&mut rng, k).cloned());
        }
        Perturbation::RemoveEdges(fraction) => {
            let budget = edge_budget(fraction, edges.len())?;
            let outcome = g.outcome_name().to_string();
            let mut order: Vec<usize> = (0..edges.len()).collect();
            order.shuffle(&mut rng);
            let mut into_outcome = edges.iter().filter(|e| e.1 == outcome).count();
            let mut drop = vec![false; edges.len()];
            let mut removed = 0;
            for i in order {
                if removed == budget {
                    break;
                }
                if edges[i].1 == outcome {
                    if into_outcome == 1 {
                        continue;
                    }
                    into_outcome -= 1;
                }
                drop[i] = true;
                removed += 1;
            }
            edges = edges
                .into_iter()
                .zip(drop)
                .filter(|(_, d)| !d)
                .map(|(e, _)| e)
                .collect();
        }
    }
    Ok(g.with_edges(edges)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankChange {
    /// Share of features whose rank differs, in percent.
    pub percentage: f64,
    pub changed: Vec<String>,
    pub before: Vec<RankEntry>,
    pub after: Vec<RankEntry>,
}

/// Rank every feature under `g` and `g2` with the fast estimator and count
/// rank differences over all features.
pub fn rank_change(
    g: &CausalGraph,
    g2: &CausalGraph,
    ds: &Dataset,
    model: &dyn PredictionModel,
    cfg: &CafeConfig,
) -> Result<RankChange, RobustnessError> {
    let names = |g: &CausalGraph| {
        let mut v: Vec<String> = g.nodes().iter().map(|d| d.name.clone()).collect();
        v.sort();
        v
    };
    if names(g) != names(g2) || g.outcome_name() != g2.outcome_name() {
        return Err(RobustnessError::NodeMismatch);
    }
    let target = UnlearningTarget::features_only(ds.schema().feature_names());
    let before = cafe_estimate(g, ds, model, &target, cfg)?.ranking;
    let after = cafe_estimate(g2, ds, model, &target, cfg)?.ranking;
    let changed: Vec<String> = before
        .iter()
        .filter(|e| {
            after
                .iter()
                .find(|a| a.feature == e.feature)
                .is_none_or(|a| a.rank != e.rank)
        })
        .map(|e| e.feature.clone())
        .collect();
    let percentage = 100.0 * changed.len() as f64 / before.len() as f64;
    Ok(RankChange {
        percentage,
        changed,
        before,
        after,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub kind: ModelKind,
    pub result: CafeResult,
}

/// Simulate unlearning with each model family and score the target.
#[allow(clippy::too_many_arguments)]
pub fn architecture_sweep(
    g: &CausalGraph,
    ds: &Dataset,
    target: &UnlearningTarget,
    kinds: &[ModelKind],
    mode: UnlearningMode,
    hp: &Hyperparams,
    seed: u64,
    cfg: &CafeConfig,
) -> Result<Vec<SweepEntry>, RobustnessError> {
    kinds
        .iter()
        .map(|&kind| {
            let model = simulate_unlearning(kind, ds, target, mode, hp, seed)?;
            let result = cafe_estimate(g, ds, &model, target, cfg)?;
            Ok(SweepEntry { kind, result })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cafe,
    Fuzz,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub method: Method,
    pub median_secs: f64,
    pub runs_secs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub repeats: usize,
    /// Worker threads for the timed runs; one avoids contention skew.
    pub threads: usize,
    pub fuzz: FuzzConfig,
    pub cafe: CafeConfig,
    pub permutation_repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repeats: 3,
            threads: 1,
            fuzz: FuzzConfig::default(),
            cafe: CafeConfig::default(),
            permutation_repeats: 5,
            seed: 0,
        }
    }
}

fn run_once(
    method: Method,
    g: &CausalGraph,
    ds: &Dataset,
    model: &dyn PredictionModel,
    target: &UnlearningTarget,
    cfg: &BenchConfig,
) -> Result<(), RobustnessError> {
    match method {
        Method::Cafe => {
            cafe_estimate(g, ds, model, target, &cfg.cafe)?;
        }
        Method::Fuzz => {
            let sem = fit_sem(g, ds)?;
            fuzz(g, &sem, model, ds, target, &cfg.fuzz)?;
        }
        Method::Permutation => {
            for f in &target.features {
                permutation_importance(ds, model, f, Metric::NegRmse, cfg.seed, cfg.permutation_repeats)?;
            }
        }
    }
    Ok(())
}

/// Median wall time per method after one untimed warmup run. Fuzz timings
/// include fitting the structural models.
pub fn benchmark(
    methods: &[Method],
    g: &CausalGraph,
    ds: &Dataset,
    model: &dyn PredictionModel,
    target: &UnlearningTarget,
    cfg: &BenchConfig,
) -> Result<Vec<Timing>, RobustnessError> {
    if cfg.repeats < 3 {
        return Err(RobustnessError::TooFewRepeats(cfg.repeats));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| RobustnessError::Perturbation(format!("thread pool: {e}")))?;
    pool.install(|| {
        methods
            .iter()
            .map(|&method| {
                run_once(method, g, ds, model, target, cfg)?;
                let mut runs = Vec::with_capacity(cfg.repeats);
                for _ in 0..cfg.repeats {
                    let start = Instant::now();
                    run_once(method, g, ds, model, target, cfg)?;
                    runs.push(start.elapsed().as_secs_f64());
                }
                Ok(Timing {
                    method,
                    median_secs: linalg::median(&runs),
                    runs_secs: runs,
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::heart;
    use crate::models::{train, ModelKind};
    use crate::synth::GeneratorSpec;

    fn spec(name: &str, n: usize) -> GeneratorSpec {
        let path = format!("{}/../../specs/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let mut s = GeneratorSpec::load(path).unwrap();
        s.n = n;
        s
    }

    fn spec_with(n: usize) -> (CausalGraph, Dataset) {
        let s = spec("heart", n);
        (s.causal_graph().unwrap(), s.generate().unwrap())
    }

    #[test]
    fn remove_half_of_heart_edges() {
        let g = heart();
        assert_eq!(g.edge_count(), 5);
        for seed in 0..20 {
            let spec = PerturbationSpec {
                perturbation: Perturbation::RemoveEdges(0.5),
                seed,
            };
            let p = perturb_graph(&g, &spec).unwrap();
            assert_eq!(p.edge_count(), 2);
            assert!(!p.parents_idx(p.outcome()).is_empty());
            assert!(p.edge_set().is_subset(&g.edge_set()));
            assert_eq!(p, perturb_graph(&g, &spec).unwrap());
        }
        let all = PerturbationSpec {
            perturbation: Perturbation::RemoveEdges(1.0),
            seed: 3,
        };
        assert_eq!(perturb_graph(&g, &all).unwrap().parents_idx(4).len(), 1);
    }

    #[test]
    fn complete_graph_cannot_grow() {
        let g = heart();
        let full = perturb_graph(
            &g,
            &PerturbationSpec {
                perturbation: Perturbation::FullyConnect,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(full.edge_count(), 10);
        let add = PerturbationSpec {
            perturbation: Perturbation::AddEdges(0.4),
            seed: 1,
        };
        assert!(matches!(
            perturb_graph(&full, &add),
            Err(RobustnessError::Complete)
        ));
        let grown = perturb_graph(&g, &add).unwrap();
        assert_eq!(grown.edge_count(), 7);
        assert!(g.edge_set().is_subset(&grown.edge_set()));
        let bad = PerturbationSpec {
            perturbation: Perturbation::AddEdges(0.0),
            seed: 1,
        };
        assert!(matches!(
            perturb_graph(&g, &bad),
            Err(RobustnessError::Perturbation(_))
        ));
    }

    #[test]
    fn identical_graphs_keep_ranks() {
        let (g, ds) = spec_with(2000);
        let model = train(
            ModelKind::Linear,
            &ds,
            &ds.schema().feature_names(),
            &Hyperparams::default(),
            0,
        )
        .unwrap();
        let rc = rank_change(&g, &g, &ds, &model, &CafeConfig::default()).unwrap();
        assert_eq!(rc.percentage, 0.0);
        assert!(rc.changed.is_empty());
    }

    #[test]
    fn benchmark_rejects_few_repeats() {
        let (g, ds) = spec_with(200);
        let model = train(
            ModelKind::Linear,
            &ds,
            &ds.schema().feature_names(),
            &Hyperparams::default(),
            0,
        )
        .unwrap();
        let target = UnlearningTarget::features_only(["S"]);
        let cfg = BenchConfig {
            repeats: 1,
            ..BenchConfig::default()
        };
        assert!(matches!(
            benchmark(&[Method::Cafe], &g, &ds, &model, &target, &cfg),
            Err(RobustnessError::TooFewRepeats(1))
        ));
        let t = benchmark(
            &[Method::Cafe, Method::Fuzz],
            &g,
            &ds,
            &model,
            &target,
            &BenchConfig::default(),
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|x| x.runs_secs.len() == 3 && x.median_secs >= 0.0));
    }
}
