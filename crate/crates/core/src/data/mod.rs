//! Typed tabular data, subgroup selection and unlearning targets.

mod predicate;

pub use predicate::{parse_predicate, Atom, BoundPredicate, CmpOp, Literal, Predicate, SyntaxError};

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CausalGraph, Domain, VariableDecl};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("header mismatch: expected {expected:?} (outcome column optional), found {found:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("row {row}, column `{column}`: cannot read `{value}` as a {expected}")]
    TypeError {
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("row {row}, column `{column}`: `{value}` is outside the declared domain")]
    DomainViolation {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset has no rows")]
    Empty,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("`{feature}`: {reason}")]
    PredicateType { feature: String, reason: String },
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("unlearning target has no features")]
    NoTargetFeatures,
    #[error("`{0}` is the outcome and cannot be an unlearning target")]
    OutcomeInTarget(String),
    #[error("unlearning target selects no rows (selector `{0}`)")]
    EmptyTarget(String),
    #[error("dataset has no outcome column")]
    MissingOutcome,
    #[error("{0}")]
    Io(String),
}

/// Column layout shared by every dataset built from one graph: the feature
/// nodes in declaration order, plus the outcome declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    features: Vec<VariableDecl>,
    outcome: VariableDecl,
}

impl Schema {
    pub fn new(features: Vec<VariableDecl>, outcome: VariableDecl) -> Self {
        Self { features, outcome }
    }

    pub fn from_graph(g: &CausalGraph) -> Self {
        Self {
            features: g.feature_decls(),
            outcome: g.outcome_decl().clone(),
        }
    }

    pub fn features(&self) -> &[VariableDecl] {
        &self.features
    }

    pub fn outcome(&self) -> &VariableDecl {
        &self.outcome
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|d| d.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|d| d.name.clone()).collect()
    }

    fn check_value(&self, decl: &VariableDecl, row: usize, v: f64) -> Result<(), DataError> {
        if !v.is_finite() {
            return Err(DataError::TypeError {
                row,
                column: decl.name.clone(),
                value: v.to_string(),
                expected: "finite number",
            });
        }
        if decl.is_categorical() && !decl.codes().contains(&v) {
            return Err(DataError::DomainViolation {
                row,
                column: decl.name.clone(),
                value: v.to_string(),
            });
        }
        Ok(())
    }
}

/// Immutable table of feature rows with an optional outcome column.
///
/// Cloning and selecting share the underlying storage; a selection is an
/// index list over the original rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Arc<Schema>,
    values: Arc<Vec<f64>>,
    outcome: Option<Arc<Vec<f64>>>,
    view: Option<Arc<Vec<usize>>>,
}

impl Dataset {
    /// Build from in-memory rows. Categorical cells hold numeric codes.
    pub fn from_rows(
        schema: Schema,
        rows: Vec<Vec<f64>>,
        outcome: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let m = schema.width();
        let mut values = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(DataError::RaggedRow {
                    row: i + 1,
                    expected: m,
                    found: row.len(),
                });
            }
            for (decl, &v) in schema.features.iter().zip(row) {
                schema.check_value(decl, i + 1, v)?;
            }
            values.extend_from_slice(row);
        }
        if let Some(y) = &outcome {
            if y.len() != rows.len() {
                return Err(DataError::RaggedRow {
                    row: y.len().min(rows.len()) + 1,
                    expected: rows.len(),
                    found: y.len(),
                });
            }
            for (i, &v) in y.iter().enumerate() {
                schema.check_value(&schema.outcome, i + 1, v)?;
            }
        }
        Ok(Self {
            schema: Arc::new(schema),
            values: Arc::new(values),
            outcome: outcome.map(Arc::new),
            view: None,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        match &self.view {
            Some(v) => v.len(),
            None => self.values.len() / self.schema.width().max(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.schema.width()
    }

    fn storage_index(&self, i: usize) -> usize {
        match &self.view {
            Some(v) => v[i],
            None => i,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.schema.width();
        let s = self.storage_index(i);
        &self.values[s * m..(s + 1) * m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let j = self
            .schema
            .position(name)
            .ok_or_else(|| DataError::UnknownFeature(name.to_string()))?;
        Ok(self.column(j))
    }

    pub fn has_outcome(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn outcome_at(&self, i: usize) -> Option<f64> {
        self.outcome.as_ref().map(|y| y[self.storage_index(i)])
    }

    pub fn outcome(&self) -> Result<Vec<f64>, DataError> {
        let y = self.outcome.as_ref().ok_or(DataError::MissingOutcome)?;
        Ok((0..self.n_rows()).map(|i| y[self.storage_index(i)]).collect())
    }

    /// View over the given row positions (relative to this dataset).
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        let mapped = positions.iter().map(|&i| self.storage_index(i)).collect();
        Dataset {
            view: Some(Arc::new(mapped)),
            ..self.clone()
        }
    }

    /// Positions of the rows satisfying `p`, in order.
    pub fn matching(&self, p: &BoundPredicate) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| p.matches(self.row(i))).collect()
    }

    /// Rows satisfying `p`, original order.
    pub fn select(&self, p: &BoundPredicate) -> Dataset {
        self.subset(&self.matching(p))
    }

    /// Same rows without the outcome column.
    pub fn without_outcome(&self) -> Dataset {
        Dataset {
            outcome: None,
            ..self.clone()
        }
    }

    /// Copy with one feature column replaced (new storage).
    pub fn with_column(&self, j: usize, column: &[f64]) -> Dataset {
        let mut rows = self.to_rows();
        for (r, &v) in rows.iter_mut().zip(column) {
            r[j] = v;
        }
        let m = self.schema.width();
        let mut values = Vec::with_capacity(rows.len() * m);
        for r in &rows {
            values.extend_from_slice(r);
        }
        Dataset {
            schema: self.schema.clone(),
            values: Arc::new(values),
            outcome: self.outcome().ok().map(Arc::new),
            view: None,
        }
    }

    pub fn read_csv<R: Read>(reader: R, schema: Schema) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| DataError::Io(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();

        let feature_names = schema.feature_names();
        // Outcome may sit anywhere in declaration order; accept the header with
        // or without it.
        let outcome_pos = header.iter().position(|h| *h == schema.outcome.name);
        let without: Vec<&String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != outcome_pos)
            .map(|(_, h)| h)
            .collect();
        if without.len() != feature_names.len() || without.iter().zip(&feature_names).any(|(a, b)| *a != b) {
            let mut expected = feature_names.clone();
            expected.push(schema.outcome.name.clone());
            return Err(DataError::SchemaMismatch {
                expected,
                found: header,
            });
        }

        let m = schema.width();
        let mut values = Vec::new();
        let mut outcome = outcome_pos.map(|_| Vec::new());
        for (r, record) in rdr.records().enumerate() {
            let row = r + 1;
            let record = record.map_err(|e| DataError::Io(e.to_string()))?;
            if record.len() != header.len() {
                return Err(DataError::RaggedRow {
                    row,
                    expected: header.len(),
                    found: record.len(),
                });
            }
            let mut col = 0;
            for (i, field) in record.iter().enumerate() {
                if Some(i) == outcome_pos {
                    let v = parse_cell(&schema.outcome, row, field)?;
                    outcome.as_mut().unwrap().push(v);
                } else {
                    values.push(parse_cell(&schema.features[col], row, field)?);
                    col += 1;
                }
            }
            debug_assert_eq!(col, m);
        }
        if values.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self {
            schema: Arc::new(schema),
            values: Arc::new(values),
            outcome: outcome.map(Arc::new),
            view: None,
        })
    }

    /// Write with the header in graph declaration order (outcome included when present).
    pub fn write_csv<W: Write>(&self, writer: W, graph: &CausalGraph) -> Result<(), DataError> {
        let io = |e: csv::Error| DataError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        let with_y = self.has_outcome();
        let header: Vec<&str> = graph
            .nodes()
            .iter()
            .enumerate()
            .filter(|(i, _)| with_y || *i != graph.outcome())
            .map(|(_, d)| d.name.as_str())
            .collect();
        w.write_record(&header).map_err(io)?;
        for i in 0..self.n_rows() {
            let row = self.row(i);
            let mut fields = Vec::with_capacity(header.len());
            for v in 0..graph.len() {
                match graph.feature_column(v) {
                    Some(c) => fields.push(format_cell(&self.schema.features[c], row[c])),
                    None if with_y => {
                        fields.push(format_cell(&self.schema.outcome, self.outcome_at(i).unwrap()))
                    }
                    None => {}
                }
            }
            w.write_record(&fields).map_err(io)?;
        }
        w.flush().map_err(|e| DataError::Io(e.to_string()))
    }
}

fn parse_cell(decl: &VariableDecl, row: usize, field: &str) -> Result<f64, DataError> {
    match &decl.domain {
        Domain::Categorical { .. } => {
            if field.is_empty() {
                return Err(DataError::TypeError {
                    row,
                    column: decl.name.clone(),
                    value: String::new(),
                    expected: "category (missing value)",
                });
            }
            decl.code_of(field).ok_or_else(|| DataError::DomainViolation {
                row,
                column: decl.name.clone(),
                value: field.to_string(),
            })
        }
        Domain::Continuous { .. } => match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(DataError::TypeError {
                row,
                column: decl.name.clone(),
                value: field.to_string(),
                expected: "finite number",
            }),
        },
    }
}

fn format_cell(decl: &VariableDecl, v: f64) -> String {
    match decl.token_of(v) {
        Some(t) => t.to_string(),
        None => v.to_string(),
    }
}

/// Load a comma-separated file whose header follows the graph's node order.
pub fn load_dataset(path: impl AsRef<Path>, schema: Schema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    Dataset::read_csv(std::io::BufReader::new(file), schema)
}

/// The set `S = {(t, f) : selector(t), f ∈ features}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearningTarget {
    pub selector: Predicate,
    pub features: Vec<String>,
}

/// An [`UnlearningTarget`] bound to an audit dataset.
#[derive(Debug, Clone)]
pub struct BoundTarget {
    /// The selected rows.
    pub rows: Dataset,
    /// Target feature columns, in the order given.
    pub columns: Vec<usize>,
    pub names: Vec<String>,
}

impl UnlearningTarget {
    pub fn new(selector: Predicate, features: Vec<String>) -> Self {
        Self { selector, features }
    }

    pub fn features_only<I, S>(features: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            selector: Predicate::all_rows(),
            features: features.into_iter().map(Into::into).collect(),
        }
    }

    /// Check the feature list against `schema` and return its columns.
    pub fn feature_columns(&self, schema: &Schema) -> Result<Vec<usize>, DataError> {
        if self.features.is_empty() {
            return Err(DataError::NoTargetFeatures);
        }
        let mut seen = BTreeSet::new();
        let mut cols = Vec::with_capacity(self.features.len());
        for f in &self.features {
            if *f == schema.outcome.name {
                return Err(DataError::OutcomeInTarget(f.clone()));
            }
            let c = schema
                .position(f)
                .ok_or_else(|| DataError::UnknownFeature(f.clone()))?;
            if seen.insert(c) {
                cols.push(c);
            }
        }
        Ok(cols)
    }

    pub fn bind(&self, ds: &Dataset) -> Result<BoundTarget, DataError> {
        let columns = self.feature_columns(ds.schema())?;
        let selector = self.selector.bind(ds.schema())?;
        let rows = ds.select(&selector);
        if rows.is_empty() {
            return Err(DataError::EmptyTarget(self.selector.to_string()));
        }
        Ok(BoundTarget {
            rows,
            names: columns
                .iter()
                .map(|&c| ds.schema().features[c].name.clone())
                .collect(),
            columns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(
            vec![
                VariableDecl::continuous("age", 0.0, 120.0),
                VariableDecl::categorical("sex", ["0", "1"]),
                VariableDecl::categorical("g", ["f", "m"]),
            ],
            VariableDecl::continuous("y", -10.0, 10.0),
        )
    }

    fn table() -> Dataset {
        // rows: (age, sex, g)
        Dataset::from_rows(
            schema(),
            vec![
                vec![30.0, 1.0, 0.0],
                vec![55.0, 1.0, 1.0],
                vec![61.0, 0.0, 1.0],
                vec![72.0, 1.0, 0.0],
            ],
            Some(vec![0.1, 0.2, 0.3, 0.4]),
        )
        .unwrap()
    }

    fn select(ds: &Dataset, text: &str) -> Vec<usize> {
        let p = parse_predicate(text).unwrap().bind(ds.schema()).unwrap();
        ds.matching(&p)
    }

    #[test]
    fn conjunction_selects_hand_enumerated_rows() {
        let ds = table();
        // age>50: rows 1,2,3; sex=1: rows 0,1,3; both: 1,3
        assert_eq!(select(&ds, "age>50"), vec![1, 2, 3]);
        assert_eq!(select(&ds, "age>50 & sex=1"), vec![1, 3]);
        assert_eq!(select(&ds, "g = m & age <= 60"), vec![1]);
    }

    #[test]
    fn all_rows_and_contradiction() {
        let ds = table();
        let all = ds.select(&Predicate::all_rows().bind(ds.schema()).unwrap());
        assert_eq!(all.to_rows(), ds.to_rows());
        assert_eq!(all.outcome().unwrap(), ds.outcome().unwrap());
        assert!(select(&ds, "age>1 & age<0").is_empty());
    }

    #[test]
    fn views_compose_and_keep_outcome() {
        let ds = table();
        let older = ds.select(&parse_predicate("age>50").unwrap().bind(ds.schema()).unwrap());
        assert_eq!(older.n_rows(), 3);
        let men = older.select(&parse_predicate("sex=1").unwrap().bind(ds.schema()).unwrap());
        assert_eq!(men.outcome().unwrap(), vec![0.2, 0.4]);
        assert_eq!(men.row(1), &[72.0, 1.0, 0.0]);
    }

    #[test]
    fn bind_errors() {
        let s = schema();
        assert!(matches!(
            parse_predicate("height>3").unwrap().bind(&s),
            Err(DataError::UnknownFeature(_))
        ));
        assert!(matches!(
            parse_predicate("age=old").unwrap().bind(&s),
            Err(DataError::PredicateType { .. })
        ));
        assert!(matches!(
            parse_predicate("g>f").unwrap().bind(&s),
            Err(DataError::PredicateType { .. })
        ));
        assert!(matches!(
            parse_predicate("sex=2").unwrap().bind(&s),
            Err(DataError::PredicateType { .. })
        ));
        assert!(parse_predicate("sex>=1").unwrap().bind(&s).is_ok());
    }

    #[test]
    fn csv_round_trip_and_header_order() {
        let ds = table();
        let text = "age,sex,g,y\n30,1,f,0.1\n55,1,m,0.2\n61,0,m,0.3\n72,1,f,0.4\n";
        let read = Dataset::read_csv(text.as_bytes(), schema()).unwrap();
        assert_eq!(read.to_rows(), ds.to_rows());
        assert_eq!(read.outcome().unwrap(), ds.outcome().unwrap());

        let audit_only = Dataset::read_csv("age,sex,g\n30,1,f\n".as_bytes(), schema()).unwrap();
        assert!(!audit_only.has_outcome());

        let err = Dataset::read_csv("sex,age,g\n1,30,f\n".as_bytes(), schema()).unwrap_err();
        assert!(matches!(err, DataError::SchemaMismatch { .. }));
    }

    #[test]
    fn csv_errors_name_row_and_column() {
        assert_eq!(
            Dataset::read_csv("age,sex,g,y\n".as_bytes(), schema()).unwrap_err(),
            DataError::Empty
        );
        let err = Dataset::read_csv("age,sex,g\n30,1,f\n40,1,q\n".as_bytes(), schema()).unwrap_err();
        assert_eq!(
            err,
            DataError::DomainViolation {
                row: 2,
                column: "g".into(),
                value: "q".into()
            }
        );
        let err = Dataset::read_csv("age,sex,g\nabc,1,f\n".as_bytes(), schema()).unwrap_err();
        assert!(matches!(err, DataError::TypeError { row: 1, ref column, .. } if column == "age"));
        let err = Dataset::read_csv("age,sex,g\n,1,f\n".as_bytes(), schema()).unwrap_err();
        assert!(matches!(err, DataError::TypeError { .. }));
        let err = Dataset::read_csv("age,sex,g\nNaN,1,f\n".as_bytes(), schema()).unwrap_err();
        assert!(matches!(err, DataError::TypeError { .. }));
    }

    #[test]
    fn target_binding() {
        let ds = table();
        let t = UnlearningTarget::new(parse_predicate("age>50").unwrap(), vec!["sex".into()]);
        let b = t.bind(&ds).unwrap();
        assert_eq!(b.rows.n_rows(), 3);
        assert_eq!(b.columns, vec![1]);

        let none = UnlearningTarget::new(parse_predicate("age>500").unwrap(), vec!["sex".into()]);
        assert!(matches!(none.bind(&ds), Err(DataError::EmptyTarget(_))));
        assert!(matches!(
            UnlearningTarget::features_only(Vec::<String>::new()).bind(&ds),
            Err(DataError::NoTargetFeatures)
        ));
        assert!(matches!(
            UnlearningTarget::features_only(["y"]).bind(&ds),
            Err(DataError::OutcomeInTarget(_))
        ));
    }
}
