//! File access and input loading shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cafe_core::data::{load_dataset, Dataset, Predicate, Schema, UnlearningTarget};
use cafe_core::error::Error;
use cafe_core::graph::CausalGraph;
use cafe_core::models::{BuiltinModel, ExternalModel, PredictionModel};
use sha2::{Digest, Sha256};

use crate::args::{InputArgs, ModelSource, TargetArgs};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::new("cli", format!("{}: {e}", path.display()), None)
}

pub fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// `out/report.json` + `effects` → `out/report.effects.csv`.
pub fn sibling(path: &Path, label: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{label}.csv"))
}

pub fn unix_timestamp() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
        .to_string()
}

pub struct Inputs {
    pub graph: CausalGraph,
    pub data: Dataset,
    pub graph_hash: String,
    pub data_hash: String,
}

pub fn load_inputs(args: &InputArgs) -> Result<Inputs, Error> {
    let graph = CausalGraph::load(&args.graph)?;
    let data = load_dataset(&args.data, Schema::from_graph(&graph))?;
    let raw = fs::read(&args.data).map_err(|e| io_error(&args.data, e))?;
    Ok(Inputs {
        graph_hash: sha256_hex(graph.to_json_pretty().as_bytes()),
        data_hash: sha256_hex(&raw),
        graph,
        data,
    })
}

/// The model plus a short description for provenance.
pub fn load_model(src: &ModelSource, schema: &Schema) -> Result<(Box<dyn PredictionModel>, String), Error> {
    match (&src.model, &src.external_cmd) {
        (Some(path), None) => {
            let text = read_text(path)?;
            let model = BuiltinModel::from_json_str(&text)?;
            let desc = format!("builtin {} sha256:{}", model.kind(), sha256_hex(text.as_bytes()));
            Ok((Box::new(model), desc))
        }
        (None, Some(cmd)) => {
            let model = ExternalModel::spawn(cmd, schema.feature_names())?;
            Ok((Box::new(model), format!("external `{cmd}`")))
        }
        _ => Err(Error::new(
            "cli",
            "give exactly one of --model and --external-cmd",
            None,
        )),
    }
}

pub fn parse_selector(text: &str) -> Result<Predicate, Error> {
    text.parse::<Predicate>()
        .map_err(|e| Error::from(cafe_core::data::DataError::Syntax(e)))
}

pub fn target(args: &TargetArgs) -> Result<UnlearningTarget, Error> {
    Ok(UnlearningTarget::new(
        parse_selector(&args.selector)?,
        args.target_features.clone(),
    ))
}
