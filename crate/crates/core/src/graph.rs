//! Causal DAG over feature and outcome variables.
//!
//! A [`CausalGraph`] is immutable once built. All queries are deterministic:
//! node-set results are reported in declaration order and path enumeration
//! is lexicographic by node-name sequence.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Default refusal threshold for [`CausalGraph::directed_paths`].
pub const DEFAULT_PATH_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` declared more than once")]
    DuplicateNode(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("outcome `{0}` must not have outgoing edges")]
    OutcomeHasChildren(String),
    #[error("invalid domain for `{node}`: {reason}")]
    InvalidDomain { node: String, reason: String },
    #[error("`{0}` is the outcome; a feature node is required")]
    OutcomeNotAllowed(String),
    #[error("more than {cap} directed paths from `{from}` to the outcome")]
    PathExplosion { from: String, cap: usize },
    #[error("invalid backdoor override for `{feature}`: {reason}")]
    InvalidOverride { feature: String, reason: String },
    #[error("invalid path {path:?}: {reason}")]
    InvalidPath { path: Vec<String>, reason: String },
    #[error("graph file: {0}")]
    Parse(String),
    #[error("graph file {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Value domain of a variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Continuous {
        range: [f64; 2],
    },
    Categorical {
        #[serde(deserialize_with = "tokens")]
        values: Vec<String>,
    },
}

fn tokens<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<String>, D::Error> {
    let raw = Vec::<serde_json::Value>::deserialize(de)?;
    raw.into_iter()
        .map(|v| match v {
            serde_json::Value::String(s) => Ok(s),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            other => Err(serde::de::Error::custom(format!(
                "categorical value must be a string or number, got {other}"
            ))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
}

impl VariableDecl {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            domain: Domain::Continuous { range: [lo, hi] },
        }
    }

    pub fn categorical<I, S>(name: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: name.into(),
            domain: Domain::Categorical {
                values: values.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.domain, Domain::Categorical { .. })
    }

    /// Numeric codes of a categorical domain, in domain order.
    ///
    /// When every token parses as a number the code is that number, so a
    /// `{0, 1}` indicator keeps its natural scale; otherwise tokens are coded
    /// by position. Empty for continuous variables.
    pub fn codes(&self) -> Vec<f64> {
        match &self.domain {
            Domain::Continuous { .. } => Vec::new(),
            Domain::Categorical { values } => {
                let parsed: Option<Vec<f64>> = values.iter().map(|v| v.trim().parse::<f64>().ok()).collect();
                match parsed {
                    Some(p) if p.iter().all(|x| x.is_finite()) => p,
                    _ => (0..values.len()).map(|i| i as f64).collect(),
                }
            }
        }
    }

    /// Whether every categorical token is itself a number.
    pub fn has_numeric_codes(&self) -> bool {
        match &self.domain {
            Domain::Continuous { .. } => true,
            Domain::Categorical { values } => numeric(values),
        }
    }

    pub fn code_of(&self, token: &str) -> Option<f64> {
        match &self.domain {
            Domain::Continuous { .. } => None,
            Domain::Categorical { values } => {
                let codes = self.codes();
                values
                    .iter()
                    .position(|v| v == token)
                    .map(|i| codes[i])
                    .or_else(|| {
                        // numeric literal spelled differently, e.g. "1.0" for "1"
                        let x: f64 = token.trim().parse().ok()?;
                        codes.iter().copied().find(|c| *c == x && numeric(values))
                    })
            }
        }
    }

    pub fn token_of(&self, code: f64) -> Option<&str> {
        match &self.domain {
            Domain::Continuous { .. } => None,
            Domain::Categorical { values } => self
                .codes()
                .iter()
                .position(|c| *c == code)
                .map(|i| values[i].as_str()),
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |reason: &str| GraphError::InvalidDomain {
            node: self.name.clone(),
            reason: reason.to_string(),
        };
        match &self.domain {
            Domain::Continuous { range: [lo, hi] } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(bad("range bounds must be finite"));
                }
                if lo > hi {
                    return Err(bad("range lower bound exceeds upper bound"));
                }
            }
            Domain::Categorical { values } => {
                if values.is_empty() {
                    return Err(bad("categorical domain needs at least one value"));
                }
                let distinct: BTreeSet<_> = values.iter().collect();
                if distinct.len() != values.len() {
                    return Err(bad("categorical values must be distinct"));
                }
                let codes = self.codes();
                let mut sorted = codes.clone();
                sorted.sort_by(f64::total_cmp);
                sorted.dedup();
                if sorted.len() != codes.len() {
                    return Err(bad("categorical values map to the same numeric code"));
                }
            }
        }
        Ok(())
    }
}

fn numeric(values: &[String]) -> bool {
    values.iter().all(|v| v.trim().parse::<f64>().is_ok())
}

/// On-disk form of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<VariableDecl>,
    pub edges: Vec<(String, String)>,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub backdoor_overrides: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Vec<String>>,
}

impl PathSet {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }
}

#[derive(Debug, Clone)]
pub struct CausalGraph {
    nodes: Vec<VariableDecl>,
    edges: Vec<(usize, usize)>,
    outcome: usize,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    index: HashMap<String, usize>,
    overrides: BTreeMap<usize, Vec<usize>>,
}

impl PartialEq for CausalGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.outcome == other.outcome
            && self.edge_set() == other.edge_set()
            && self.overrides == other.overrides
    }
}

impl CausalGraph {
    pub fn new(
        nodes: Vec<VariableDecl>,
        edges: Vec<(String, String)>,
        outcome: &str,
    ) -> Result<Self, GraphError> {
        Self::from_file(GraphFile {
            nodes,
            edges,
            outcome: outcome.to_string(),
            backdoor_overrides: BTreeMap::new(),
        })
    }

    pub fn from_file(file: GraphFile) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(file.nodes.len());
        for (i, n) in file.nodes.iter().enumerate() {
            n.validate()?;
            if index.insert(n.name.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.name.clone()));
            }
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| GraphError::UnknownNode(name.to_string()))
        };
        let outcome = lookup(&file.outcome)?;

        let n = file.nodes.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut edges = Vec::with_capacity(file.edges.len());
        let mut seen = BTreeSet::new();
        for (p, c) in &file.edges {
            let (pi, ci) = (lookup(p)?, lookup(c)?);
            if pi == ci {
                return Err(GraphError::SelfLoop(p.clone()));
            }
            if !seen.insert((pi, ci)) {
                return Err(GraphError::DuplicateEdge(p.clone(), c.clone()));
            }
            if pi == outcome {
                return Err(GraphError::OutcomeHasChildren(p.clone()));
            }
            parents[ci].push(pi);
            children[pi].push(ci);
            edges.push((pi, ci));
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }

        let order = kahn(&parents, &children).ok_or_else(|| {
            GraphError::CycleDetected(
                find_cycle(&children)
                    .into_iter()
                    .map(|i| file.nodes[i].name.clone())
                    .collect(),
            )
        })?;

        let mut graph = Self {
            nodes: file.nodes,
            edges,
            outcome,
            parents,
            children,
            order,
            index,
            overrides: BTreeMap::new(),
        };

        for (feature, set) in &file.backdoor_overrides {
            let f = graph.feature_index(feature)?;
            let mut z = Vec::with_capacity(set.len());
            for name in set {
                z.push(graph.index_of(name)?);
            }
            z.sort_unstable();
            z.dedup();
            if !graph.is_valid_backdoor_idx(f, &z) {
                return Err(GraphError::InvalidOverride {
                    feature: feature.clone(),
                    reason: "set does not satisfy the backdoor criterion".into(),
                });
            }
            graph.overrides.insert(f, z);
        }
        Ok(graph)
    }

    pub fn from_json_str(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(p, c)| (self.name(p).to_string(), self.name(c).to_string()))
                .collect(),
            outcome: self.name(self.outcome).to_string(),
            backdoor_overrides: self
                .overrides
                .iter()
                .map(|(f, z)| {
                    (
                        self.name(*f).to_string(),
                        z.iter().map(|&i| self.name(i).to_string()).collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph serializes")
    }

    /// Same node set and outcome, different edges. Backdoor overrides are dropped.
    pub fn with_edges(&self, edges: Vec<(String, String)>) -> Result<Self, GraphError> {
        Self::from_file(GraphFile {
            nodes: self.nodes.clone(),
            edges,
            outcome: self.outcome_name().to_string(),
            backdoor_overrides: BTreeMap::new(),
        })
    }

    // ---- basic accessors -------------------------------------------------

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[VariableDecl] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &VariableDecl {
        &self.nodes[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.nodes[idx].name
    }

    pub fn index_of(&self, name: &str) -> Result<usize, GraphError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(name.to_string()))
    }

    /// Index of a node that must be a feature (not the outcome).
    pub fn feature_index(&self, name: &str) -> Result<usize, GraphError> {
        let i = self.index_of(name)?;
        if i == self.outcome {
            return Err(GraphError::OutcomeNotAllowed(name.to_string()));
        }
        Ok(i)
    }

    pub fn outcome(&self) -> usize {
        self.outcome
    }

    pub fn outcome_name(&self) -> &str {
        self.name(self.outcome)
    }

    pub fn outcome_decl(&self) -> &VariableDecl {
        &self.nodes[self.outcome]
    }

    /// Feature node indices in declaration order (everything except the outcome).
    pub fn feature_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| i != self.outcome).collect()
    }

    /// Dataset column holding node `v`, or `None` for the outcome.
    pub fn feature_column(&self, v: usize) -> Option<usize> {
        match v.cmp(&self.outcome) {
            std::cmp::Ordering::Less => Some(v),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(v - 1),
        }
    }

    /// Node index behind dataset column `col`.
    pub fn column_node(&self, col: usize) -> usize {
        if col < self.outcome {
            col
        } else {
            col + 1
        }
    }

    pub fn feature_decls(&self) -> Vec<VariableDecl> {
        self.feature_nodes()
            .into_iter()
            .map(|i| self.nodes[i].clone())
            .collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges.iter().map(|&(p, c)| (self.name(p), self.name(c)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.edges()
            .map(|(p, c)| (p.to_string(), c.to_string()))
            .collect()
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.children[parent].binary_search(&child).is_ok()
    }

    pub fn parents_idx(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children_idx(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn parents(&self, name: &str) -> Result<Vec<String>, GraphError> {
        let v = self.index_of(name)?;
        Ok(self.names(&self.parents[v]))
    }

    fn names(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.name(i).to_string()).collect()
    }

    fn name_set(&self, idx: &[usize]) -> BTreeSet<String> {
        idx.iter().map(|&i| self.name(i).to_string()).collect()
    }

    // ---- ordering and reachability --------------------------------------

    pub fn topo_order_idx(&self) -> &[usize] {
        &self.order
    }

    /// Parents before children; ties broken by declaration order.
    pub fn topological_order(&self) -> Vec<String> {
        self.names(&self.order)
    }

    /// Nodes reachable from `v` by a directed path, excluding `v`, ascending index.
    pub fn descendants_idx(&self, v: usize) -> Vec<usize> {
        let mut mark = vec![false; self.len()];
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &c in &self.children[u] {
                if !mark[c] {
                    mark[c] = true;
                    queue.push_back(c);
                }
            }
        }
        mark[v] = false;
        (0..self.len()).filter(|&i| mark[i]).collect()
    }

    pub fn ancestors_idx(&self, v: usize) -> Vec<usize> {
        let mut mark = vec![false; self.len()];
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &p in &self.parents[u] {
                if !mark[p] {
                    mark[p] = true;
                    queue.push_back(p);
                }
            }
        }
        mark[v] = false;
        (0..self.len()).filter(|&i| mark[i]).collect()
    }

    pub fn descendants(&self, name: &str) -> Result<BTreeSet<String>, GraphError> {
        let v = self.index_of(name)?;
        Ok(self.name_set(&self.descendants_idx(v)))
    }

    // ---- d-separation -------------------------------------------------------

    /// d-separation of `x` and `y` given `z`, by reachability over
    /// (node, direction-of-arrival) states.
    pub fn d_separated_idx(&self, x: usize, y: usize, z: &[usize]) -> bool {
        let n = self.len();
        let mut in_z = vec![false; n];
        for &v in z {
            in_z[v] = true;
        }
        // nodes that are in z or have a descendant in z
        let mut opens_collider = in_z.clone();
        let mut queue: VecDeque<usize> = z.iter().copied().collect();
        while let Some(u) = queue.pop_front() {
            for &p in &self.parents[u] {
                if !opens_collider[p] {
                    opens_collider[p] = true;
                    queue.push_back(p);
                }
            }
        }

        // direction: 0 = arrived from a child (moving up), 1 = from a parent (moving down)
        let mut visited = vec![[false; 2]; n];
        let mut stack = vec![(x, 0usize)];
        while let Some((v, dir)) = stack.pop() {
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            if v == y {
                return false;
            }
            if dir == 0 {
                if !in_z[v] {
                    stack.extend(self.parents[v].iter().map(|&p| (p, 0)));
                    stack.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
            } else {
                if !in_z[v] {
                    stack.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
                if opens_collider[v] {
                    stack.extend(self.parents[v].iter().map(|&p| (p, 0)));
                }
            }
        }
        true
    }

    pub fn d_separated(&self, x: &str, y: &str, z: &[&str]) -> Result<bool, GraphError> {
        let (xi, yi) = (self.index_of(x)?, self.index_of(y)?);
        let zi = z
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.d_separated_idx(xi, yi, &zi))
    }

    /// Copy of the graph with every edge leaving `f` removed.
    fn without_outgoing(&self, f: usize) -> CausalGraph {
        let mut g = self.clone();
        g.children[f].clear();
        g.edges.retain(|&(p, _)| p != f);
        for list in g.parents.iter_mut() {
            list.retain(|&p| p != f);
        }
        g
    }

    /// Backdoor criterion for `f -> Y`: no descendant of `f` in `z`, and `z`
    /// d-separates `f` from `Y` once `f`'s outgoing edges are cut.
    pub fn is_valid_backdoor_idx(&self, f: usize, z: &[usize]) -> bool {
        if z.contains(&f) || z.contains(&self.outcome) {
            return false;
        }
        let desc = self.descendants_idx(f);
        if z.iter().any(|v| desc.contains(v)) {
            return false;
        }
        self.without_outgoing(f).d_separated_idx(f, self.outcome, z)
    }

    pub fn is_valid_backdoor(&self, f: &str, z: &[&str]) -> Result<bool, GraphError> {
        let fi = self.feature_index(f)?;
        let zi = z
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.is_valid_backdoor_idx(fi, &zi))
    }

    /// Adjustment set for `f`: the expert override when one was declared,
    /// otherwise the parent set of `f`.
    pub fn backdoor_set_idx(&self, f: usize) -> Vec<usize> {
        self.overrides
            .get(&f)
            .cloned()
            .unwrap_or_else(|| self.parents[f].clone())
    }

    pub fn backdoor_set(&self, f: &str) -> Result<BTreeSet<String>, GraphError> {
        let fi = self.feature_index(f)?;
        Ok(self.name_set(&self.backdoor_set_idx(fi)))
    }

    // ---- mediation ----------------------------------------------------------

    /// Nodes strictly between `f` and the outcome on some directed path.
    pub fn mediators_idx(&self, f: usize) -> Vec<usize> {
        let anc_y = self.ancestors_idx(self.outcome);
        self.descendants_idx(f)
            .into_iter()
            .filter(|v| *v != self.outcome && anc_y.binary_search(v).is_ok())
            .collect()
    }

    pub fn mediators(&self, f: &str) -> Result<BTreeSet<String>, GraphError> {
        let fi = self.feature_index(f)?;
        Ok(self.name_set(&self.mediators_idx(fi)))
    }

    pub fn directed_paths(&self, f: &str) -> Result<PathSet, GraphError> {
        self.directed_paths_capped(f, DEFAULT_PATH_CAP)
    }

    /// Every directed path from `f` to the outcome, sorted lexicographically by
    /// node-name sequence. Refuses when more than `cap` paths exist.
    pub fn directed_paths_capped(&self, f: &str, cap: usize) -> Result<PathSet, GraphError> {
        let fi = self.feature_index(f)?;
        let mut reaches_y = vec![false; self.len()];
        for a in self.ancestors_idx(self.outcome) {
            reaches_y[a] = true;
        }
        reaches_y[self.outcome] = true;

        let mut out: Vec<Vec<String>> = Vec::new();
        if !reaches_y[fi] {
            return Ok(PathSet { paths: out });
        }
        let mut stack: Vec<(usize, usize)> = vec![(fi, 0)];
        let mut current = vec![fi];
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if v == self.outcome {
                out.push(self.names(&current));
                if out.len() > cap {
                    return Err(GraphError::PathExplosion {
                        from: f.to_string(),
                        cap,
                    });
                }
                stack.pop();
                current.pop();
                continue;
            }
            let kids = &self.children[v];
            // skip children that cannot reach the outcome
            while *next < kids.len() && !reaches_y[kids[*next]] {
                *next += 1;
            }
            if *next < kids.len() {
                let c = kids[*next];
                *next += 1;
                stack.push((c, 0));
                current.push(c);
            } else {
                stack.pop();
                current.pop();
            }
        }
        out.sort();
        Ok(PathSet { paths: out })
    }

    /// Check that `path` is a directed path from a feature to the outcome.
    pub fn validate_path(&self, path: &[String]) -> Result<Vec<usize>, GraphError> {
        let bad = |reason: &str| GraphError::InvalidPath {
            path: path.to_vec(),
            reason: reason.to_string(),
        };
        if path.len() < 2 {
            return Err(bad("a path needs at least a source and the outcome"));
        }
        let idx = path
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<Vec<_>, _>>()?;
        if *idx.last().unwrap() != self.outcome {
            return Err(bad("path must end at the outcome"));
        }
        for w in idx.windows(2) {
            if !self.has_edge(w[0], w[1]) {
                return Err(bad(&format!(
                    "{} -> {} is not an edge",
                    self.name(w[0]),
                    self.name(w[1])
                )));
            }
        }
        Ok(idx)
    }
}

impl fmt::Display for CausalGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<String> = self.edges().map(|(p, c)| format!("{p}->{c}")).collect();
        write!(f, "DAG[{}; Y={}]", edges.join(", "), self.outcome_name())
    }
}

/// Kahn's algorithm taking the lowest declaration index among ready nodes.
fn kahn(parents: &[Vec<usize>], children: &[Vec<usize>]) -> Option<Vec<usize>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let n = parents.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// One directed cycle, closed (first node repeated at the end).
fn find_cycle(children: &[Vec<usize>]) -> Vec<usize> {
    let n = children.len();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        state[root] = 1;
        while let Some(&mut (v, ref mut i)) = stack.last_mut() {
            if *i < children[v].len() {
                let c = children[v][*i];
                *i += 1;
                match state[c] {
                    0 => {
                        state[c] = 1;
                        parent[c] = v;
                        stack.push((c, 0));
                    }
                    1 => {
                        let mut cycle = vec![c];
                        let mut u = v;
                        while u != c {
                            cycle.push(u);
                            u = parent[u];
                        }
                        cycle.push(c);
                        cycle.reverse();
                        return cycle;
                    }
                    _ => {}
                }
            } else {
                state[v] = 2;
                stack.pop();
            }
        }
    }
    Vec::new()
}
