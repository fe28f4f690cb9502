//! Fast influence estimator: backdoor-adjusted contrasts of model outputs
//! over the target rows, without per-instance propagation.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Predicate, UnlearningTarget};
use crate::graph::{CausalGraph, GraphError, VariableDecl};
use crate::influence::{rank_features, FeatureInfluence, RankEntry, StrataSummary};
use crate::linalg::{self, Design};
use crate::models::{check_schema, predict_dataset, ModelError, PredictionModel};
use crate::rng;
use crate::sem::Contrast;

/// Continuous conditioning variables are cut into at most this many quantile bins.
pub const STRATA_BINS: usize = 10;
/// Strata are dropped when either arm has fewer rows than this.
pub const MIN_ARM_ROWS: usize = 2;
/// Above this dropped fraction of rows the stratified estimate is refused.
pub const MAX_DROPPED_MASS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CafeError {
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error(
        "stratified estimate for `{feature}` dropped {:.0}% of rows (arms too thin); use the regression estimator",
        dropped_mass * 100.0
    )]
    Degenerate { feature: String, dropped_mass: f64 },
    #[error("`{feature}` needs {cells} strata, above the cap of {cap}; use the regression estimator or raise the cap")]
    TooManyStrata {
        feature: String,
        cells: usize,
        cap: usize,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Least-squares coefficient of the feature after adjustment.
    #[default]
    Regression,
    /// Weighted average of within-stratum arm differences.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CafeConfig {
    pub estimator: Estimator,
    /// Per-feature (baseline, treatment); others use the unit contrast.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub contrasts: BTreeMap<String, Contrast>,
    /// Verdict threshold; defaults to 1% of the outcome standard deviation.
    pub tau: Option<f64>,
    /// Maximum number of strata in stratified mode.
    pub strata_cap: usize,
    /// Sum stratum differences without weights (compatibility mode).
    pub unweighted: bool,
    /// Number of bootstrap resamples for a total-effect range.
    pub bootstrap: Option<usize>,
    pub seed: u64,
}

impl Default for CafeConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Regression,
            contrasts: BTreeMap::new(),
            tau: None,
            strata_cap: 64,
            unweighted: false,
            bootstrap: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Unlearned,
    ResidualInfluence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CafeResult {
    /// Target features in declaration order.
    pub features: Vec<FeatureInfluence>,
    pub ranking: Vec<RankEntry>,
    /// Sum of per-feature totals.
    pub combined_total: f64,
    pub tau: f64,
    pub verdict: Verdict,
    pub rows: usize,
}

impl CafeResult {
    /// The same scores limited to `features`, with the combined total and
    /// verdict recomputed for that subset under the same threshold.
    pub fn restricted_to(&self, features: &[String]) -> CafeResult {
        let kept: Vec<FeatureInfluence> = self
            .features
            .iter()
            .filter(|f| features.contains(&f.feature))
            .cloned()
            .collect();
        let combined_total: f64 = kept.iter().map(|f| f.total).sum();
        CafeResult {
            ranking: rank_features(&kept),
            verdict: verdict(combined_total, self.tau),
            combined_total,
            tau: self.tau,
            rows: self.rows,
            features: kept,
        }
    }
}

fn verdict(combined_total: f64, tau: f64) -> Verdict {
    if combined_total.abs() < tau {
        Verdict::Unlearned
    } else {
        Verdict::ResidualInfluence
    }
}

/// One conditioning variable as it enters an estimator.
struct Covariate {
    col: usize,
    decl: VariableDecl,
}

struct Prepared {
    rows: Dataset,
    outputs: Vec<f64>,
}

fn resolve_contrast(decl: &VariableDecl, cfg: &CafeConfig) -> Result<Contrast, CafeError> {
    let c = match cfg.contrasts.get(&decl.name) {
        Some(c) => *c,
        None => Contrast::unit(decl).ok_or_else(|| {
            CafeError::Config(format!(
                "`{}` has a single category; nothing to contrast",
                decl.name
            ))
        })?,
    };
    if c.baseline == c.treatment {
        return Err(CafeError::Config(format!(
            "`{}`: baseline and treatment are both {}",
            decl.name, c.baseline
        )));
    }
    if decl.is_categorical() {
        let codes = decl.codes();
        for v in [c.baseline, c.treatment] {
            if !codes.contains(&v) {
                return Err(CafeError::Config(format!(
                    "`{}`: {v} is not a category code",
                    decl.name
                )));
            }
        }
    }
    Ok(c)
}

/// Design columns for one covariate: the raw value for continuous
/// variables, indicators for every category but the first otherwise.
fn encode(decl: &VariableDecl, v: f64, out: &mut Vec<f64>) {
    if decl.is_categorical() {
        for c in &decl.codes()[1..] {
            out.push(f64::from(u8::from(v == *c)));
        }
    } else {
        out.push(v);
    }
}

fn regression_effect(
    p: &Prepared,
    idx: &[usize],
    f: &Covariate,
    contrast: Contrast,
    adjust: &[Covariate],
) -> (f64, bool) {
    let width: usize = std::iter::once(f)
        .chain(adjust)
        .map(|c| {
            if c.decl.is_categorical() {
                c.decl.codes().len() - 1
            } else {
                1
            }
        })
        .sum();
    let mut x = Design::with_capacity(width, idx.len());
    let mut y = Vec::with_capacity(idx.len());
    let mut buf = Vec::new();
    for &i in idx {
        let row = p.rows.row(i);
        buf.clear();
        encode(&f.decl, row[f.col], &mut buf);
        for z in adjust {
            encode(&z.decl, row[z.col], &mut buf);
        }
        x.push(&buf);
        y.push(p.outputs[i]);
    }
    let Some(fit) = linalg::least_squares(&x, &y) else {
        return (f64::NAN, true);
    };
    let effect = if f.decl.is_categorical() {
        let codes = f.decl.codes();
        let coef = |v: f64| {
            let k = codes.iter().position(|c| *c == v).expect("contrast validated");
            if k == 0 {
                0.0
            } else {
                fit.coef[k - 1]
            }
        };
        coef(contrast.treatment) - coef(contrast.baseline)
    } else {
        fit.coef[0] * (contrast.treatment - contrast.baseline)
    };
    (effect, fit.ridge)
}

/// Quantile bins per continuous covariate: [`STRATA_BINS`] unless the
/// product of all stratifier levels would exceed `cap`, then fewer (at
/// least two).
fn bins_per_continuous(adjust: &[Covariate], cap: usize) -> usize {
    let discrete: usize = adjust
        .iter()
        .filter(|c| c.decl.is_categorical())
        .map(|c| c.decl.codes().len())
        .product();
    let k = adjust.iter().filter(|c| !c.decl.is_categorical()).count() as u32;
    if k == 0 {
        return STRATA_BINS;
    }
    (2..=STRATA_BINS)
        .rev()
        .find(|b| {
            b.checked_pow(k)
                .and_then(|c| c.checked_mul(discrete))
                .is_some_and(|c| c <= cap)
        })
        .unwrap_or(2)
}

/// Quantile bin edges of a continuous covariate over `idx`.
fn bin_edges(p: &Prepared, idx: &[usize], cov: &Covariate, bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = idx.iter().map(|&i| p.rows.row(i)[cov.col]).collect();
    v.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins)
        .map(|k| v[(k * v.len() / bins).min(v.len() - 1)])
        .collect();
    edges.dedup();
    edges
}

#[derive(Default)]
struct Cell {
    n: usize,
    n_t: usize,
    sum_t: f64,
    n_b: usize,
    sum_b: f64,
}

struct StratifiedEstimate {
    effect: f64,
    summary: StrataSummary,
}

fn stratified_effect(
    p: &Prepared,
    idx: &[usize],
    f: &Covariate,
    contrast: Contrast,
    adjust: &[Covariate],
    cfg: &CafeConfig,
) -> Result<StratifiedEstimate, CafeError> {
    let bins = bins_per_continuous(adjust, cfg.strata_cap);
    let edges: Vec<Option<Vec<f64>>> = adjust
        .iter()
        .map(|z| (!z.decl.is_categorical()).then(|| bin_edges(p, idx, z, bins)))
        .collect();
    let mut cells: BTreeMap<Vec<u64>, Cell> = BTreeMap::new();
    for &i in idx {
        let row = p.rows.row(i);
        let key: Vec<u64> = adjust
            .iter()
            .zip(&edges)
            .map(|(z, e)| match e {
                Some(e) => e.partition_point(|&b| b < row[z.col]) as u64,
                None => row[z.col].to_bits(),
            })
            .collect();
        let cell = cells.entry(key).or_default();
        cell.n += 1;
        let v = row[f.col];
        if v == contrast.treatment {
            cell.n_t += 1;
            cell.sum_t += p.outputs[i];
        } else if v == contrast.baseline {
            cell.n_b += 1;
            cell.sum_b += p.outputs[i];
        }
        if cells.len() > cfg.strata_cap {
            return Err(CafeError::TooManyStrata {
                feature: f.decl.name.clone(),
                cells: cells.len(),
                cap: cfg.strata_cap,
            });
        }
    }
    let n = idx.len() as f64;
    let mut kept_mass = 0.0;
    let mut acc = 0.0;
    let mut used = 0;
    let mut dropped = 0;
    let mut dropped_rows = 0usize;
    for cell in cells.values() {
        if cell.n_t < MIN_ARM_ROWS || cell.n_b < MIN_ARM_ROWS {
            dropped += 1;
            dropped_rows += cell.n;
            continue;
        }
        used += 1;
        let diff = cell.sum_t / cell.n_t as f64 - cell.sum_b / cell.n_b as f64;
        let w = cell.n as f64 / n;
        kept_mass += w;
        acc += if cfg.unweighted { diff } else { w * diff };
    }
    let dropped_mass = dropped_rows as f64 / n;
    if used == 0 || dropped_mass > MAX_DROPPED_MASS {
        return Err(CafeError::Degenerate {
            feature: f.decl.name.clone(),
            dropped_mass,
        });
    }
    let effect = if cfg.unweighted { acc } else { acc / kept_mass };
    Ok(StratifiedEstimate {
        effect,
        summary: StrataSummary {
            used,
            dropped,
            dropped_mass,
        },
    })
}

struct FeatureSpec {
    f: Covariate,
    contrast: Contrast,
    adjustment: Vec<Covariate>,
    with_mediators: Vec<Covariate>,
    /// The regression estimator's sets: the above plus every other
    /// non-descendant of f as a precision covariate.
    regression_total: Vec<Covariate>,
    regression_direct: Vec<Covariate>,
    adjustment_names: Vec<String>,
    mediator_names: Vec<String>,
}

fn covariate(g: &CausalGraph, node: usize) -> Covariate {
    Covariate {
        col: g.feature_column(node).expect("conditioning sets hold features"),
        decl: g.node(node).clone(),
    }
}

fn feature_spec(g: &CausalGraph, col: usize, cfg: &CafeConfig) -> Result<FeatureSpec, CafeError> {
    let node = g.column_node(col);
    let decl = g.node(node);
    let contrast = resolve_contrast(decl, cfg)?;
    let z = g.backdoor_set_idx(node);
    let m = g.mediators_idx(node);
    // mediator parents close backdoor paths from the mediators to Y
    let mediator_parents = m.iter().flat_map(|&v| g.parents_idx(v).iter().copied());
    let mut zm: Vec<usize> = z
        .iter()
        .chain(&m)
        .copied()
        .chain(mediator_parents)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    zm.retain(|&v| v != node);
    // non-descendants keep the adjustment valid and soak up output variance
    // the feature does not cause, so an unread, unconnected feature scores 0
    let descendants = g.descendants_idx(node);
    let precision: Vec<usize> = g
        .feature_nodes()
        .into_iter()
        .filter(|&v| v != node && descendants.binary_search(&v).is_err())
        .collect();
    let union = |base: &[usize]| -> Vec<Covariate> {
        base.iter()
            .chain(&precision)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|v| covariate(g, v))
            .collect()
    };
    Ok(FeatureSpec {
        f: covariate(g, node),
        contrast,
        regression_total: union(&z),
        regression_direct: union(&zm),
        adjustment: z.iter().map(|&v| covariate(g, v)).collect(),
        with_mediators: zm.iter().map(|&v| covariate(g, v)).collect(),
        adjustment_names: z.iter().map(|&v| g.name(v).to_string()).collect(),
        mediator_names: m.iter().map(|&v| g.name(v).to_string()).collect(),
    })
}

#[derive(Clone, Copy)]
enum Pass {
    Total,
    Direct,
}

fn estimate(
    p: &Prepared,
    idx: &[usize],
    spec: &FeatureSpec,
    pass: Pass,
    cfg: &CafeConfig,
) -> Result<(f64, bool, Option<StrataSummary>), CafeError> {
    match cfg.estimator {
        Estimator::Regression => {
            let adjust = match pass {
                Pass::Total => &spec.regression_total,
                Pass::Direct => &spec.regression_direct,
            };
            let (e, ridge) = regression_effect(p, idx, &spec.f, spec.contrast, adjust);
            Ok((e, ridge, None))
        }
        Estimator::Stratified => {
            let adjust = match pass {
                Pass::Total => &spec.adjustment,
                Pass::Direct => &spec.with_mediators,
            };
            let s = stratified_effect(p, idx, &spec.f, spec.contrast, adjust, cfg)?;
            Ok((s.effect, false, Some(s.summary)))
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn score_feature(p: &Prepared, spec: &FeatureSpec, cfg: &CafeConfig) -> Result<FeatureInfluence, CafeError> {
    let idx: Vec<usize> = (0..p.rows.n_rows()).collect();
    let (total, ridge_t, strata) = estimate(p, &idx, spec, Pass::Total, cfg)?;
    let (direct, ridge_d, _) = estimate(p, &idx, spec, Pass::Direct, cfg)?;
    let mut fi = FeatureInfluence::new(spec.f.decl.name.clone(), total, direct);
    fi.evaluations = idx.len();
    fi.ridge_fallback = ridge_t || ridge_d;
    fi.strata = strata;
    fi.adjustment = spec.adjustment_names.clone();
    fi.mediators = spec.mediator_names.clone();
    if let Some(b) = cfg.bootstrap {
        if b > 0 {
            let n = idx.len();
            let mut totals = Vec::with_capacity(b);
            for r in 0..b {
                let mut g = rng::stream(cfg.seed, &[spec.f.col as u64, r as u64]);
                let sample: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
                // degenerate resamples are skipped rather than failing the run
                if let Ok((t, ..)) = estimate(p, &sample, spec, Pass::Total, cfg) {
                    if t.is_finite() {
                        totals.push(t);
                    }
                }
            }
            if !totals.is_empty() {
                totals.sort_by(f64::total_cmp);
                fi.total_range = Some([percentile(&totals, 0.025), percentile(&totals, 0.975)]);
            }
        }
    }
    Ok(fi)
}

fn prepare(
    ds: &Dataset,
    model: &dyn PredictionModel,
    target: &UnlearningTarget,
) -> Result<(Prepared, Vec<usize>), CafeError> {
    check_schema(model, ds.schema())?;
    let bound = target.bind(ds)?;
    let outputs = predict_dataset(model, &bound.rows)?;
    let mut cols = bound.columns.clone();
    cols.sort_unstable();
    Ok((
        Prepared {
            rows: bound.rows,
            outputs,
        },
        cols,
    ))
}

/// Default verdict threshold: 1% of the outcome's standard deviation on
/// `ds`, or of `outputs` when `ds` has no outcome column.
pub fn default_tau(ds: &Dataset, outputs: &[f64]) -> f64 {
    match ds.outcome() {
        Ok(y) => 0.01 * linalg::std_dev(&y),
        Err(_) => 0.01 * linalg::std_dev(outputs),
    }
}

/// Total, direct and indirect influence for every target feature, plus the
/// verdict `|Σ total| < τ`.
pub fn cafe_estimate(
    g: &CausalGraph,
    ds: &Dataset,
    model: &dyn PredictionModel,
    target: &UnlearningTarget,
    cfg: &CafeConfig,
) -> Result<CafeResult, CafeError> {
    if let Some(t) = cfg.tau {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CafeError::Config(format!(
                "threshold must be finite and ≥ 0, got {t}"
            )));
        }
    }
    let (p, cols) = prepare(ds, model, target)?;
    let features = cols
        .iter()
        .map(|&c| score_feature(&p, &feature_spec(g, c, cfg)?, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let combined_total: f64 = features.iter().map(|f| f.total).sum();
    let tau = cfg.tau.unwrap_or_else(|| default_tau(ds, &p.outputs));
    Ok(CafeResult {
        ranking: rank_features(&features),
        verdict: verdict(combined_total, tau),
        combined_total,
        tau,
        rows: p.rows.n_rows(),
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFeatureEffect {
    pub features: Vec<FeatureInfluence>,
    /// Sum of per-feature totals.
    pub combined: f64,
    /// Sum of per-feature |total|.
    pub magnitude: f64,
    /// Set when the combined effect is under a tenth of the summed magnitudes.
    pub cancellation: bool,
}

/// Joint influence of several features as the sum of their totals.
pub fn multi_feature_effect(
    g: &CausalGraph,
    ds: &Dataset,
    model: &dyn PredictionModel,
    features: &[String],
    selector: &Predicate,
    cfg: &CafeConfig,
) -> Result<MultiFeatureEffect, CafeError> {
    let distinct: BTreeSet<&String> = features.iter().collect();
    if distinct.len() < 2 {
        return Err(CafeError::Config(
            "a multi-feature effect needs at least two distinct features".into(),
        ));
    }
    let target = UnlearningTarget::new(selector.clone(), features.to_vec());
    let r = cafe_estimate(g, ds, model, &target, cfg)?;
    let magnitude: f64 = r.features.iter().map(|f| f.total.abs()).sum();
    Ok(MultiFeatureEffect {
        combined: r.combined_total,
        cancellation: magnitude > 0.0 && r.combined_total.abs() < 0.1 * magnitude,
        magnitude,
        features: r.features,
    })
}
