//! Influence scores shared by the fuzzing oracle and the fast estimator.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathScore {
    pub path: Vec<String>,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_change: Option<f64>,
}

/// Per-feature total, direct and indirect influence. `indirect` is always
/// computed as `total - direct`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfluence {
    pub feature: String,
    pub total: f64,
    pub direct: f64,
    pub indirect: f64,
    /// Number of model evaluations per arm behind the scores.
    pub evaluations: usize,
    /// Largest per-instance |ΔY| seen for the total effect.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_change: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_abs_change: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub paths: Vec<PathScore>,
    /// Adjustment set used by the estimator.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub adjustment: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mediators: Vec<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub ridge_fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<StrataSummary>,
    /// Bootstrap percentile range of the total effect.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_range: Option<[f64; 2]>,
}

impl FeatureInfluence {
    pub fn new(feature: impl Into<String>, total: f64, direct: f64) -> Self {
        Self {
            feature: feature.into(),
            total,
            direct,
            indirect: total - direct,
            evaluations: 0,
            max_abs_change: None,
            mean_abs_change: None,
            paths: Vec::new(),
            adjustment: Vec::new(),
            mediators: Vec::new(),
            ridge_fallback: false,
            strata: None,
            total_range: None,
        }
    }
}

/// Bookkeeping for the stratified estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrataSummary {
    pub used: usize,
    pub dropped: usize,
    /// Fraction of target rows in dropped strata, total-effect pass.
    pub dropped_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub feature: String,
    pub score: f64,
}

/// Rank by descending |score|; ties keep input order. Ranks start at 1.
pub fn rank_by_magnitude(names: &[String], scores: &[f64]) -> Vec<RankEntry> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    order
        .into_iter()
        .enumerate()
        .map(|(r, i)| RankEntry {
            rank: r + 1,
            feature: names[i].clone(),
            score: scores[i],
        })
        .collect()
}

/// Rank features by |total|. Input order is taken as declaration order.
pub fn rank_features(scores: &[FeatureInfluence]) -> Vec<RankEntry> {
    let names: Vec<String> = scores.iter().map(|s| s.feature.clone()).collect();
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    rank_by_magnitude(&names, &totals)
}

/// Spearman rank correlation between two rankings over the same names.
/// Returns `None` if the name sets differ or have fewer than two entries.
pub fn spearman(a: &[RankEntry], b: &[RankEntry]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let mut d2 = 0.0;
    for e in a {
        let other = b.iter().find(|x| x.feature == e.feature)?;
        let d = e.rank as f64 - other.rank as f64;
        d2 += d * d;
    }
    let n = n as f64;
    Some(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ranks_by_magnitude_with_stable_ties() {
        let r = rank_by_magnitude(&names(&["a", "b", "c", "d"]), &[0.5, -7.0, 0.5, 3.0]);
        let order: Vec<&str> = r.iter().map(|e| e.feature.as_str()).collect();
        assert_eq!(order, vec!["b", "d", "a", "c"]);
        assert_eq!(r[0].rank, 1);
        let zeros = rank_by_magnitude(&names(&["x", "y", "z"]), &[0.0; 3]);
        let order: Vec<&str> = zeros.iter().map(|e| e.feature.as_str()).collect();
        assert_eq!(order, vec!["x", "y", "z"]);
    }

    #[test]
    fn spearman_extremes() {
        let n = names(&["a", "b", "c"]);
        let up = rank_by_magnitude(&n, &[3.0, 2.0, 1.0]);
        let down = rank_by_magnitude(&n, &[1.0, 2.0, 3.0]);
        assert_eq!(spearman(&up, &up), Some(1.0));
        assert_eq!(spearman(&up, &down), Some(-1.0));
    }

    #[test]
    fn indirect_is_difference() {
        let f = FeatureInfluence::new("s", 0.3, 0.1);
        assert_eq!(f.indirect, 0.3 - 0.1);
    }
}
