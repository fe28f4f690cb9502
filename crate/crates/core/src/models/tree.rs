use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Hyperparams;
use crate::linalg::Design;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        column: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    column,
                    threshold,
                    left,
                    right,
                } => at = if x[column] <= threshold { left } else { right },
            }
        }
    }
}

/// Bagged depth-limited regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(x: &Design, y: &[f64], hp: &Hyperparams, seed: u64) -> Self {
        let trees = (0..hp.trees.max(1))
            .map(|t| {
                let mut rng = rng::stream(seed, &[t as u64]);
                let sample: Vec<usize> = (0..x.n).map(|_| rng.random_range(0..x.n)).collect();
                let mut b = Builder {
                    x,
                    y,
                    depth: hp.depth,
                    min_leaf: hp.min_leaf.max(1),
                    nodes: Vec::new(),
                };
                b.grow(sample, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

struct Builder<'a> {
    x: &'a Design,
    y: &'a [f64],
    depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= self.depth || rows.len() < 2 * self.min_leaf {
            return at;
        }
        let Some((column, threshold)) = self.best_split(&rows) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x.row(i)[column] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split {
            column,
            threshold,
            left,
            right,
        };
        at
    }

    /// Split minimizing the summed squared error of the two children.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
        for c in 0..self.x.p {
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.x.row(i)[c], self.y[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += sorted[k].1;
                let nl = k + 1;
                if sorted[k].0 == sorted[k + 1].0 || nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let nr = n - nl;
                let right_sum = total - left_sum;
                // maximizing this is equivalent to minimizing child SSE
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, c, 0.5 * (sorted[k].0 + sorted[k + 1].0)));
                }
            }
        }
        best.map(|(_, c, t)| (c, t))
    }
}
