//! One error type for callers that stitch modules together. It names the
//! module that failed and suggests a fix.

use std::fmt;

use crate::baselines::BaselineError;
use crate::cafe::CafeError;
use crate::data::DataError;
use crate::fuzz::FuzzError;
use crate::graph::GraphError;
use crate::models::ModelError;
use crate::robustness::RobustnessError;
use crate::sem::SemError;
use crate::synth::SynthError;

#[derive(Debug)]
pub struct Error {
    pub module: &'static str,
    pub message: String,
    pub hint: Option<&'static str>,
}

impl Error {
    pub fn new(module: &'static str, message: impl Into<String>, hint: Option<&'static str>) -> Self {
        Self {
            module,
            message: message.into(),
            hint,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.module, self.message)?;
        if let Some(h) = self.hint {
            write!(f, "\n  hint: {h}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Error {}

impl From<GraphError> for Error {
    fn from(e: GraphError) -> Self {
        let hint = match &e {
            GraphError::CycleDetected(_) => Some("remove one edge of the reported cycle"),
            GraphError::OutcomeHasChildren(_) => Some("the outcome must be a sink; drop its outgoing edges"),
            GraphError::UnknownNode(_) => Some("check the spelling against the graph's node list"),
            GraphError::PathExplosion { .. } => {
                Some("analyse total and direct effects instead of single paths")
            }
            GraphError::InvalidOverride { .. } => Some(
                "an adjustment set must exclude descendants of the feature and block every backdoor path",
            ),
            _ => None,
        };
        Self::new("graph", e.to_string(), hint)
    }
}

impl From<DataError> for Error {
    fn from(e: DataError) -> Self {
        let hint = match &e {
            DataError::SchemaMismatch { .. } => {
                Some("the CSV header must list the graph's features, then the outcome")
            }
            DataError::DomainViolation { .. } => Some("extend the declared domain or clean the column"),
            DataError::Syntax(_) => Some("predicates look like `age > 50 & sex = 1`"),
            DataError::EmptyTarget(_) => Some("loosen the --where predicate"),
            DataError::UnknownFeature(_) => Some("feature names are case-sensitive"),
            _ => None,
        };
        Self::new("data", e.to_string(), hint)
    }
}

impl From<SemError> for Error {
    fn from(e: SemError) -> Self {
        let hint = match &e {
            SemError::TooFewRows { .. } => Some("supply more rows or fewer parents for that node"),
            SemError::GraphMismatch(_) => Some("refit the structural models for this graph"),
            _ => None,
        };
        Self::new("sem", e.to_string(), hint)
    }
}

impl From<SynthError> for Error {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Graph(g) => g.into(),
            SynthError::Data(d) => d.into(),
            other => Self::new("synth", other.to_string(), None),
        }
    }
}

impl From<ModelError> for Error {
    fn from(e: ModelError) -> Self {
        let hint = match &e {
            ModelError::SchemaMismatch { .. } => {
                Some("the model must accept the dataset's features in order")
            }
            ModelError::Protocol(_) => {
                Some("the command must read {\"rows\": ...} lines and answer {\"preds\": ...} lines")
            }
            ModelError::Timeout(_) => {
                Some("the external command may be buffering its output; flush after each line")
            }
            ModelError::NonBinaryOutcome(_) => Some("use the linear kind for continuous outcomes"),
            ModelError::NoFeatures => Some("the target covers every feature; nothing is left to train on"),
            _ => None,
        };
        Self::new("models", e.to_string(), hint)
    }
}

impl From<FuzzError> for Error {
    fn from(e: FuzzError) -> Self {
        match e {
            FuzzError::Data(d) => d.into(),
            FuzzError::Model(m) => m.into(),
            FuzzError::Sem(s) => s.into(),
            FuzzError::Graph(g) => g.into(),
            FuzzError::Config(_) => Self::new(
                "fuzz",
                e.to_string(),
                Some("use at least one sample per instance"),
            ),
        }
    }
}

impl From<CafeError> for Error {
    fn from(e: CafeError) -> Self {
        match e {
            CafeError::Data(d) => d.into(),
            CafeError::Model(m) => m.into(),
            CafeError::Graph(g) => g.into(),
            CafeError::Degenerate { .. } | CafeError::TooManyStrata { .. } => {
                Self::new("cafe", e.to_string(), Some("pass --estimator regression"))
            }
            CafeError::Config(_) => Self::new("cafe", e.to_string(), None),
        }
    }
}

impl From<BaselineError> for Error {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Data(d) => d.into(),
            BaselineError::Model(m) => m.into(),
            BaselineError::MissingOutcome => Self::new(
                "baselines",
                e.to_string(),
                Some("permutation importance needs the outcome column"),
            ),
            other => Self::new("baselines", other.to_string(), None),
        }
    }
}

impl From<RobustnessError> for Error {
    fn from(e: RobustnessError) -> Self {
        match e {
            RobustnessError::Graph(g) => g.into(),
            RobustnessError::Cafe(c) => c.into(),
            RobustnessError::Fuzz(f) => f.into(),
            RobustnessError::Sem(s) => s.into(),
            RobustnessError::Model(m) => m.into(),
            RobustnessError::Baseline(b) => b.into(),
            other => Self::new("robustness", other.to_string(), None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_errors_name_the_failing_module() {
        let e: Error = CafeError::Model(ModelError::NoFeatures).into();
        assert_eq!(e.module, "models");
        assert!(e.to_string().contains("hint:"));
        let e: Error = FuzzError::Graph(GraphError::UnknownNode("Q".into())).into();
        assert_eq!(e.module, "graph");
    }
}
