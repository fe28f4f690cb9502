//! Run reports, cross-method comparison tables and their flat CSV forms.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::FairnessReport;
use crate::cafe::{CafeConfig, CafeResult, Verdict};
use crate::fuzz::FuzzConfig;
use crate::influence::{rank_by_magnitude, rank_features, FeatureInfluence, PathScore, RankEntry};
use crate::robustness::{RankChange, SweepEntry, Timing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub features: Vec<String>,
    pub selector: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzSection {
    pub config: FuzzConfig,
    pub features: Vec<FeatureInfluence>,
    pub ranking: Vec<RankEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathScore>,
}

impl FuzzSection {
    pub fn new(config: FuzzConfig, features: Vec<FeatureInfluence>, paths: Vec<PathScore>) -> Self {
        let ranking = rank_features(&features);
        Self {
            config,
            features,
            ranking,
            paths,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CafeSection {
    pub config: CafeConfig,
    /// Target features only; the verdict comes from here.
    pub result: CafeResult,
    /// Every feature, when scored for ranking context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<CafeResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSection {
    pub metric: String,
    pub repeats: usize,
    pub seed: u64,
    pub scores: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub predicate: String,
    pub result: CafeResult,
}

/// Where every number in a report came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub code_version: String,
    pub seed: u64,
    /// SHA-256 of the canonical run configuration.
    pub config_hash: String,
    pub graph_hash: String,
    pub data_hash: String,
    pub model: String,
}

/// Fields that legitimately differ between otherwise identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Volatile {
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timings: Vec<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub target: TargetSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzz: Option<FuzzSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cafe: Option<CafeSection>,
    /// Present exactly when the fast estimator ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<PermutationSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fairness: Vec<FairnessReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subgroups: Vec<Subgroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rank_changes: Vec<RankChange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepEntry>,
    /// Group and threshold conventions behind the fairness numbers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub provenance: Provenance,
    pub volatile: Volatile,
}

impl InfluenceReport {
    pub fn new(target: TargetSummary, provenance: Provenance) -> Self {
        Self {
            target,
            fuzz: None,
            cafe: None,
            verdict: None,
            permutation: None,
            fairness: Vec::new(),
            subgroups: Vec::new(),
            rank_changes: Vec::new(),
            sweep: Vec::new(),
            notes: Vec::new(),
            provenance,
            volatile: Volatile::default(),
        }
    }

    pub fn set_cafe(&mut self, config: CafeConfig, result: CafeResult) {
        self.verdict = Some(result.verdict);
        self.cafe = Some(CafeSection {
            config,
            result,
            context: None,
        });
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Score sources for comparison: each method that produced per-feature
    /// scores contributes one.
    pub fn sources(&self) -> Vec<ScoreSource> {
        let mut out = Vec::new();
        if let Some(c) = &self.cafe {
            let scored = c.context.as_ref().unwrap_or(&c.result);
            out.push(ScoreSource::from_influence("cafe", &scored.features));
        }
        if let Some(f) = &self.fuzz {
            out.push(ScoreSource::from_influence("fuzz", &f.features));
        }
        if let Some(p) = &self.permutation {
            out.push(ScoreSource {
                name: "permutation".into(),
                scores: p.scores.iter().map(|e| (e.feature.clone(), e.score)).collect(),
            });
        }
        out
    }

    /// Total, direct and indirect scores per method and feature.
    pub fn effects_csv(&self) -> String {
        let mut s = String::from("method,feature,total,direct,indirect,rank\n");
        let mut emit = |method: &str, feats: &[FeatureInfluence], ranking: &[RankEntry]| {
            for f in feats {
                let rank = ranking
                    .iter()
                    .find(|r| r.feature == f.feature)
                    .map_or(0, |r| r.rank);
                let _ = writeln!(
                    s,
                    "{method},{},{},{},{},{rank}",
                    f.feature, f.total, f.direct, f.indirect
                );
            }
        };
        if let Some(c) = &self.cafe {
            let scored = c.context.as_ref().unwrap_or(&c.result);
            emit("cafe", &scored.features, &scored.ranking);
        }
        if let Some(f) = &self.fuzz {
            emit("fuzz", &f.features, &f.ranking);
        }
        s
    }

    pub fn paths_csv(&self) -> Option<String> {
        let f = self.fuzz.as_ref().filter(|f| !f.paths.is_empty())?;
        let mut s = String::from("path,score\n");
        for p in &f.paths {
            let _ = writeln!(s, "{},{}", p.path.join("->"), p.score);
        }
        Some(s)
    }

    pub fn fairness_csv(&self) -> Option<String> {
        if self.fairness.is_empty() {
            return None;
        }
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("privileged,threshold,spd,di,di_infinite,eod,aod\n");
        for r in &self.fairness {
            let _ = writeln!(
                s,
                "\"{}\",{},{},{},{},{},{}",
                r.privileged,
                r.threshold,
                r.spd,
                opt(r.di),
                r.di_infinite,
                opt(r.eod),
                opt(r.aod)
            );
        }
        Some(s)
    }
}

/// Per-feature scores from one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSource {
    pub name: String,
    pub scores: Vec<(String, f64)>,
}

impl ScoreSource {
    pub fn from_influence(name: &str, feats: &[FeatureInfluence]) -> Self {
        Self {
            name: name.into(),
            scores: feats.iter().map(|f| (f.feature.clone(), f.total)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub score: f64,
    /// Score divided by the method's largest |score|.
    pub normalized: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub methods: Vec<String>,
    /// Union of features, first-seen order.
    pub features: Vec<String>,
    /// `cells[feature][method]`; `None` where a method has no score.
    pub cells: Vec<Vec<Option<ComparisonCell>>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompareError {
    #[error("comparison needs at least two score sources, got {0}")]
    TooFewSources(usize),
    #[error("method `{0}` appears twice")]
    DuplicateMethod(String),
}

/// Side-by-side normalized scores and ranks. Features missing from a source
/// are left empty and listed by [`ComparisonTable::missing`].
pub fn compare(sources: &[ScoreSource]) -> Result<ComparisonTable, CompareError> {
    if sources.len() < 2 {
        return Err(CompareError::TooFewSources(sources.len()));
    }
    let mut features: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for src in sources {
        if !seen.insert(src.name.as_str()) {
            return Err(CompareError::DuplicateMethod(src.name.clone()));
        }
        for (f, _) in &src.scores {
            if !features.contains(f) {
                features.push(f.clone());
            }
        }
    }
    let mut cells = vec![vec![None; sources.len()]; features.len()];
    for (m, src) in sources.iter().enumerate() {
        let names: Vec<String> = src.scores.iter().map(|s| s.0.clone()).collect();
        let values: Vec<f64> = src.scores.iter().map(|s| s.1).collect();
        let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for entry in rank_by_magnitude(&names, &values) {
            let row = features
                .iter()
                .position(|f| *f == entry.feature)
                .expect("feature in union");
            cells[row][m] = Some(ComparisonCell {
                score: entry.score,
                normalized: if scale > 0.0 { entry.score / scale } else { 0.0 },
                rank: entry.rank,
            });
        }
    }
    Ok(ComparisonTable {
        methods: sources.iter().map(|s| s.name.clone()).collect(),
        features,
        cells,
    })
}

impl ComparisonTable {
    /// (feature, method) pairs without a score.
    pub fn missing(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (f, row) in self.features.iter().zip(&self.cells) {
            for (m, cell) in self.methods.iter().zip(row) {
                if cell.is_none() {
                    out.push((f.clone(), m.clone()));
                }
            }
        }
        out
    }

    pub fn rank_of(&self, feature: &str, method: &str) -> Option<usize> {
        let f = self.features.iter().position(|x| x == feature)?;
        let m = self.methods.iter().position(|x| x == method)?;
        self.cells[f][m].as_ref().map(|c| c.rank)
    }

    /// One row per feature; per method a normalized score and rank column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature");
        for m in &self.methods {
            let _ = write!(s, ",{m}_normalized,{m}_rank");
        }
        s.push('\n');
        for (f, row) in self.features.iter().zip(&self.cells) {
            s.push_str(f);
            for cell in row {
                match cell {
                    Some(c) => {
                        let _ = write!(s, ",{},{}", c.normalized, c.rank);
                    }
                    None => s.push_str(",,"),
                }
            }
            s.push('\n');
        }
        s
    }
}
