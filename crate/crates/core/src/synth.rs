//! Ancestral sampling from linear structural equations, with the analytic
//! effect oracle for the same equations.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BoundPredicate, DataError, Dataset, Predicate, Schema};
use crate::graph::{CausalGraph, Domain, GraphError, GraphFile};
use crate::linalg::sigmoid;
use crate::models::{ModelError, PredictionModel};
use crate::rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid generator spec: {0}")]
    Invalid(String),
    #[error("ground-truth effects need linear equations; {0}")]
    Nonlinear(String),
    #[error("{0}")]
    Io(String),
}

/// Distribution of a parentless node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootDistribution {
    /// Second category with probability `p`, first otherwise.
    Bernoulli(f64),
    /// Uniform over the declared range or category list.
    Uniform,
    /// Category probabilities in domain order.
    Categorical(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    /// Value = linear predictor + Gaussian noise.
    #[default]
    Identity,
    /// Binary node; second category with probability sigmoid(linear predictor).
    Logistic,
}

/// Adds `coefficient · parent` whenever `gate` holds for the row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub parent: String,
    pub gate: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    #[serde(default)]
    pub intercept: f64,
    /// Parent name → coefficient; parents left out have coefficient 0.
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default, skip_serializing_if = "is_identity")]
    pub link: Link,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interactions: Vec<Interaction>,
}

fn is_identity(l: &Link) -> bool {
    *l == Link::Identity
}

impl Equation {
    pub fn coefficient(&self, parent: &str) -> f64 {
        self.coefficients.get(parent).copied().unwrap_or(0.0)
    }

    pub fn is_linear(&self) -> bool {
        self.link == Link::Identity && self.interactions.is_empty()
    }
}

/// Generator input: a graph, one equation per non-root node (including the
/// outcome), root distributions, row count and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub graph: GraphFile,
    #[serde(default)]
    pub roots: BTreeMap<String, RootDistribution>,
    pub equations: BTreeMap<String, Equation>,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Per-feature effect on the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Effect {
    pub total: f64,
    pub direct: f64,
    pub indirect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Feature name → effect, in declaration order when iterated via `features`.
    pub features: Vec<(String, Effect)>,
}

impl GroundTruth {
    /// Effect of `feature`; zero for names not in the graph.
    pub fn get(&self, feature: &str) -> Effect {
        self.features
            .iter()
            .find(|(n, _)| n == feature)
            .map(|(_, e)| *e)
            .unwrap_or_default()
    }

    /// Feature names ordered by descending |total|, ties in declaration order.
    pub fn ranking(&self) -> Vec<String> {
        let mut order: Vec<usize> = (0..self.features.len()).collect();
        order.sort_by(|&a, &b| {
            self.features[b]
                .1
                .total
                .abs()
                .total_cmp(&self.features[a].1.total.abs())
                .then(a.cmp(&b))
        });
        order.into_iter().map(|i| self.features[i].0.clone()).collect()
    }
}

struct Compiled {
    graph: CausalGraph,
    schema: Schema,
    /// Per node: equation with coefficients aligned to graph parents, or the
    /// root distribution.
    nodes: Vec<NodeSampler>,
}

enum NodeSampler {
    Root(Vec<f64>, RootDistribution, [f64; 2]),
    Equation {
        intercept: f64,
        coefficients: Vec<f64>,
        noise: Normal<f64>,
        link: Link,
        codes: Vec<f64>,
        interactions: Vec<(usize, BoundPredicate, f64)>,
    },
}

impl GeneratorSpec {
    pub fn from_json_str(text: &str) -> Result<Self, SynthError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))?;
        spec.compile()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| SynthError::Io(format!("{}: {e}", p.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs serialize")
    }

    pub fn causal_graph(&self) -> Result<CausalGraph, SynthError> {
        Ok(CausalGraph::from_file(self.graph.clone())?)
    }

    pub fn is_linear(&self) -> bool {
        self.equations.values().all(Equation::is_linear)
    }

    fn compile(&self) -> Result<Compiled, SynthError> {
        let graph = self.causal_graph()?;
        let schema = Schema::from_graph(&graph);
        let invalid = |m: String| Err(SynthError::Invalid(m));
        for name in self.equations.keys().chain(self.roots.keys()) {
            graph.index_of(name)?;
        }
        let mut nodes = Vec::with_capacity(graph.len());
        for v in 0..graph.len() {
            let decl = graph.node(v);
            let parents = graph.parents_idx(v);
            if parents.is_empty() {
                if self.equations.contains_key(&decl.name) {
                    return invalid(format!("root `{}` has an equation", decl.name));
                }
                let dist = self.roots.get(&decl.name).cloned().unwrap_or(match &decl.domain {
                    Domain::Categorical { values } if values.len() == 2 => RootDistribution::Bernoulli(0.5),
                    _ => RootDistribution::Uniform,
                });
                match (&dist, &decl.domain) {
                    (RootDistribution::Bernoulli(p), Domain::Categorical { values })
                        if values.len() == 2 && (0.0..=1.0).contains(p) => {}
                    (RootDistribution::Categorical(ps), Domain::Categorical { values })
                        if ps.len() == values.len()
                            && ps.iter().all(|p| *p >= 0.0)
                            && ps.iter().sum::<f64>() > 0.0 => {}
                    (RootDistribution::Uniform, _) => {}
                    _ => {
                        return invalid(format!(
                            "distribution {dist:?} does not fit the domain of `{}`",
                            decl.name
                        ))
                    }
                }
                let range = match decl.domain {
                    Domain::Continuous { range } => range,
                    Domain::Categorical { .. } => [0.0, 0.0],
                };
                nodes.push(NodeSampler::Root(decl.codes(), dist, range));
                continue;
            }
            if self.roots.contains_key(&decl.name) {
                return invalid(format!("`{}` has parents but a root distribution", decl.name));
            }
            let Some(eq) = self.equations.get(&decl.name) else {
                return invalid(format!("no equation for `{}`", decl.name));
            };
            let parent_names: Vec<&str> = parents.iter().map(|&p| graph.name(p)).collect();
            for (p, c) in &eq.coefficients {
                if !parent_names.contains(&p.as_str()) {
                    return invalid(format!("`{}` has a coefficient for non-parent `{p}`", decl.name));
                }
                if !c.is_finite() {
                    return invalid(format!("coefficient {p}→{} is not finite", decl.name));
                }
            }
            if !(eq.noise >= 0.0 && eq.noise.is_finite()) {
                return invalid(format!("noise for `{}` must be finite and ≥ 0", decl.name));
            }
            let codes = decl.codes();
            match (eq.link, decl.is_categorical()) {
                (Link::Identity, false) => {}
                (Link::Logistic, true) if codes.len() == 2 => {}
                _ => {
                    return invalid(format!(
                        "`{}`: identity link needs a continuous node, logistic a binary one",
                        decl.name
                    ))
                }
            }
            let mut interactions = Vec::new();
            for it in &eq.interactions {
                let Some(col) = parent_names.iter().position(|p| *p == it.parent) else {
                    return invalid(format!(
                        "interaction parent `{}` is not a parent of `{}`",
                        it.parent, decl.name
                    ));
                };
                let gate: Predicate = it.gate.parse().map_err(|e: crate::data::SyntaxError| {
                    SynthError::Invalid(format!("gate `{}`: {e}", it.gate))
                })?;
                for atom in &gate.atoms {
                    if !parent_names.contains(&atom.feature.as_str()) {
                        return invalid(format!(
                            "gate of `{}` reads non-parent `{}`",
                            decl.name, atom.feature
                        ));
                    }
                }
                interactions.push((
                    graph.feature_column(parents[col]).expect("parents are features"),
                    gate.bind(&schema)?,
                    it.coefficient,
                ));
            }
            nodes.push(NodeSampler::Equation {
                intercept: eq.intercept,
                coefficients: parent_names.iter().map(|p| eq.coefficient(p)).collect(),
                noise: Normal::new(0.0, eq.noise).expect("noise validated"),
                link: eq.link,
                codes,
                interactions,
            });
        }
        if self.n == 0 {
            return invalid("n must be at least 1".into());
        }
        Ok(Compiled { graph, schema, nodes })
    }

    /// Sample `n` rows; row `i` depends only on `(seed, i)`.
    pub fn generate(&self) -> Result<Dataset, SynthError> {
        let c = self.compile()?;
        let g = &c.graph;
        let width = c.schema.width();
        let rows: Vec<(Vec<f64>, f64)> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(self.seed, &[i as u64]);
                let mut row = vec![0.0; width];
                let mut y = 0.0;
                for &v in g.topo_order_idx() {
                    let value = match &c.nodes[v] {
                        NodeSampler::Root(codes, dist, [lo, hi]) => match dist {
                            RootDistribution::Bernoulli(p) => codes[usize::from(r.random::<f64>() < *p)],
                            RootDistribution::Categorical(ps) => {
                                let total: f64 = ps.iter().sum();
                                let mut u = r.random::<f64>() * total;
                                let mut k = 0;
                                while k + 1 < ps.len() && u >= ps[k] {
                                    u -= ps[k];
                                    k += 1;
                                }
                                codes[k]
                            }
                            RootDistribution::Uniform if codes.is_empty() => {
                                if hi > lo {
                                    r.random_range(*lo..*hi)
                                } else {
                                    *lo
                                }
                            }
                            RootDistribution::Uniform => codes[r.random_range(0..codes.len())],
                        },
                        NodeSampler::Equation {
                            intercept,
                            coefficients,
                            noise,
                            link,
                            codes,
                            interactions,
                        } => {
                            let mut eta = *intercept;
                            for (&p, b) in g.parents_idx(v).iter().zip(coefficients) {
                                eta += b * row[g.feature_column(p).expect("parents are features")];
                            }
                            for (col, gate, b) in interactions {
                                if gate.matches(&row) {
                                    eta += b * row[*col];
                                }
                            }
                            match link {
                                Link::Identity => eta + noise.sample(&mut r),
                                Link::Logistic => codes[usize::from(r.random::<f64>() < sigmoid(eta))],
                            }
                        }
                    };
                    match g.feature_column(v) {
                        Some(col) => row[col] = value,
                        None => y = value,
                    }
                }
                (row, y)
            })
            .collect();
        let (rows, y): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        Ok(Dataset::from_rows(c.schema, rows, Some(y))?)
    }

    /// Product of edge coefficients along `path`.
    pub fn path_effect(&self, path: &[String]) -> Result<f64, SynthError> {
        let g = self.causal_graph()?;
        g.validate_path(path)?;
        Ok(path
            .windows(2)
            .map(|w| self.equations.get(&w[1]).map_or(0.0, |eq| eq.coefficient(&w[0])))
            .product())
    }

    /// Path-product total, direct and indirect effect of every feature on
    /// the outcome, in declaration order.
    pub fn ground_truth_effects(&self) -> Result<GroundTruth, SynthError> {
        if let Some((name, _)) = self.equations.iter().find(|(_, e)| !e.is_linear()) {
            return Err(SynthError::Nonlinear(format!(
                "equation for `{name}` is not linear"
            )));
        }
        let g = self.causal_graph()?;
        let outcome = g.outcome_name().to_string();
        let mut features = Vec::new();
        for v in g.feature_nodes() {
            let name = g.name(v).to_string();
            let mut total = 0.0;
            for path in g.directed_paths(&name)?.paths {
                total += self.path_effect(&path)?;
            }
            let direct = self
                .equations
                .get(&outcome)
                .map_or(0.0, |eq| eq.coefficient(&name));
            features.push((
                name,
                Effect {
                    total,
                    direct,
                    indirect: total - direct,
                },
            ));
        }
        Ok(GroundTruth { features })
    }

    /// Fold every interaction into a plain coefficient, keeping those for
    /// which `active` returns true and dropping the rest.
    pub fn specialize(&self, active: impl Fn(&Interaction) -> bool) -> GeneratorSpec {
        let mut out = self.clone();
        for eq in out.equations.values_mut() {
            for it in std::mem::take(&mut eq.interactions) {
                if active(&it) {
                    *eq.coefficients.entry(it.parent.clone()).or_insert(0.0) += it.coefficient;
                }
            }
        }
        out
    }

    /// The outcome equation without noise, as a prediction model over the
    /// feature columns.
    pub fn outcome_model(&self) -> Result<EquationModel, SynthError> {
        let c = self.compile()?;
        let y = c.graph.outcome();
        let NodeSampler::Equation {
            intercept,
            coefficients,
            link,
            interactions,
            ..
        } = &c.nodes[y]
        else {
            return Err(SynthError::Invalid("outcome has no parents".into()));
        };
        let mut terms = vec![0.0; c.schema.width()];
        for (&p, b) in c.graph.parents_idx(y).iter().zip(coefficients) {
            terms[c.graph.feature_column(p).expect("parents are features")] = *b;
        }
        Ok(EquationModel {
            features: c.schema.feature_names(),
            intercept: *intercept,
            coefficients: terms,
            link: *link,
            interactions: interactions.clone(),
        })
    }
}

/// Shape of a randomly drawn linear generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSpecShape {
    /// Number of features; the outcome is added on top.
    pub features: usize,
    /// Probability of each forward edge.
    pub edge_probability: f64,
    /// Share of roots that are binary rather than continuous.
    pub binary_roots: f64,
    pub rows: usize,
}

impl GeneratorSpec {
    /// Random linear generator: features `X0..` in topological order and an
    /// outcome `Y` with at least one parent. Coefficients are multiples of
    /// 0.5 in [-3, 3], zero excluded.
    pub fn random_linear(shape: RandomSpecShape, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[u64::MAX]);
        let k = shape.features.max(1);
        let name = |i: usize| if i == k { "Y".to_string() } else { format!("X{i}") };
        let mut edges = Vec::new();
        for b in 1..=k {
            for a in 0..b {
                if rng.random::<f64>() < shape.edge_probability {
                    edges.push((name(a), name(b)));
                }
            }
        }
        if !edges.iter().any(|e| e.1 == "Y") {
            edges.push((name(k - 1), "Y".to_string()));
        }
        let mut nodes = Vec::with_capacity(k + 1);
        let mut roots = BTreeMap::new();
        let mut equations = BTreeMap::new();
        for v in 0..=k {
            let parents: Vec<&String> = edges.iter().filter(|e| e.1 == name(v)).map(|e| &e.0).collect();
            if parents.is_empty() && rng.random::<f64>() < shape.binary_roots {
                nodes.push(crate::graph::VariableDecl::categorical(name(v), ["0", "1"]));
                roots.insert(name(v), RootDistribution::Bernoulli(rng.random_range(0.2..0.8)));
                continue;
            }
            nodes.push(crate::graph::VariableDecl::continuous(name(v), -1e6, 1e6));
            if parents.is_empty() {
                roots.insert(name(v), RootDistribution::Uniform);
                continue;
            }
            let coefficients = parents
                .into_iter()
                .map(|p| {
                    let mut c = 0.0;
                    while c == 0.0 {
                        c = f64::from(rng.random_range(-6i32..=6)) * 0.5;
                    }
                    (p.clone(), c)
                })
                .collect();
            equations.insert(
                name(v),
                Equation {
                    intercept: f64::from(rng.random_range(-4i32..=4)),
                    coefficients,
                    noise: 1.0,
                    link: Link::Identity,
                    interactions: Vec::new(),
                },
            );
        }
        // uniform roots need a finite range to draw from
        for d in nodes.iter_mut() {
            if roots.get(&d.name) == Some(&RootDistribution::Uniform) {
                d.domain = Domain::Continuous { range: [0.0, 5.0] };
            }
        }
        GeneratorSpec {
            graph: GraphFile {
                nodes,
                edges,
                outcome: "Y".to_string(),
                backdoor_overrides: BTreeMap::new(),
            },
            roots,
            equations,
            n: shape.rows,
            seed,
        }
    }
}

/// Noise-free outcome equation of a generator, usable as a known model.
#[derive(Debug, Clone)]
pub struct EquationModel {
    features: Vec<String>,
    intercept: f64,
    coefficients: Vec<f64>,
    link: Link,
    interactions: Vec<(usize, BoundPredicate, f64)>,
}

impl PredictionModel for EquationModel {
    fn feature_names(&self) -> &[String] {
        &self.features
    }

    fn predict(&self, rows: &[f64]) -> Result<Vec<f64>, ModelError> {
        let w = self.features.len();
        if !rows.len().is_multiple_of(w) {
            return Err(ModelError::BatchShape {
                len: rows.len(),
                width: w,
            });
        }
        Ok(rows
            .chunks_exact(w)
            .map(|row| {
                let mut eta = self.intercept
                    + row
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(x, b)| x * b)
                        .sum::<f64>();
                for (col, gate, b) in &self.interactions {
                    if gate.matches(row) {
                        eta += b * row[*col];
                    }
                }
                match self.link {
                    Link::Identity => eta,
                    Link::Logistic => sigmoid(eta),
                }
            })
            .collect())
    }
}
