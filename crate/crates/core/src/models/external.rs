//! Line-delimited JSON protocol for models living in another process.
//!
//! The harness writes `{"features":[...]}` once, then one `{"rows":[[...],...]}`
//! line per request; the model answers each request with `{"preds":[...]}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{rows_in, ModelError, PredictionModel};

pub const MAX_BATCH_ROWS: usize = 4096;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Handshake {
    features: Vec<String>,
}

#[derive(Serialize)]
struct Request<'a> {
    rows: Vec<&'a [f64]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OwnedRequest {
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Reply {
    preds: Vec<f64>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    /// Set once the stream can no longer be trusted to be in step.
    broken: Option<String>,
}

impl Channel {
    fn exit_reason(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => status.to_string(),
            _ => "output closed".to_string(),
        }
    }
}

/// A model served by a subprocess over the line protocol.
pub struct ExternalModel {
    features: Vec<String>,
    timeout: Duration,
    channel: Mutex<Channel>,
}

impl ExternalModel {
    /// Start `command` through `sh -c` and send the handshake.
    pub fn spawn(command: &str, features: Vec<String>) -> Result<Self, ModelError> {
        Self::spawn_with_timeout(command, features, DEFAULT_TIMEOUT)
    }

    pub fn spawn_with_timeout(
        command: &str,
        features: Vec<String>,
        timeout: Duration,
    ) -> Result<Self, ModelError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::Io(format!("cannot start `{command}`: {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take().expect("stdin is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut channel = Channel {
            child,
            stdin,
            lines: rx,
            broken: None,
        };
        let hello = serde_json::to_string(&Handshake {
            features: features.clone(),
        })
        .expect("handshake serializes");
        if writeln!(channel.stdin, "{hello}")
            .and_then(|_| channel.stdin.flush())
            .is_err()
        {
            let reason = channel.exit_reason();
            return Err(ModelError::SubprocessExit(reason));
        }
        Ok(Self {
            features,
            timeout,
            channel: Mutex::new(channel),
        })
    }

    fn round_trip(&self, ch: &mut Channel, rows: &[f64], width: usize) -> Result<Vec<f64>, ModelError> {
        let request = Request {
            rows: rows.chunks_exact(width).collect(),
        };
        let n = request.rows.len();
        let line = serde_json::to_string(&request).expect("rows serialize");
        if writeln!(ch.stdin, "{line}")
            .and_then(|_| ch.stdin.flush())
            .is_err()
        {
            return Err(ModelError::SubprocessExit(ch.exit_reason()));
        }
        let reply = match ch.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(ModelError::Protocol(format!("unreadable reply: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(ModelError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(ModelError::SubprocessExit(ch.exit_reason())),
        };
        let parsed: Reply = serde_json::from_str(&reply)
            .map_err(|e| ModelError::Protocol(format!("malformed reply `{}`: {e}", clip(&reply))))?;
        if parsed.preds.len() != n {
            return Err(ModelError::Protocol(format!(
                "{} predictions for {n} rows",
                parsed.preds.len()
            )));
        }
        Ok(parsed.preds)
    }
}

fn clip(s: &str) -> &str {
    match s.char_indices().nth(80) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl PredictionModel for ExternalModel {
    fn feature_names(&self) -> &[String] {
        &self.features
    }

    fn predict(&self, rows: &[f64]) -> Result<Vec<f64>, ModelError> {
        let width = self.features.len();
        rows_in(rows.len(), width)?;
        let mut ch = self.channel.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(reason) = &ch.broken {
            return Err(ModelError::Protocol(format!(
                "channel unusable after earlier error: {reason}"
            )));
        }
        let mut out = Vec::with_capacity(rows.len() / width);
        for chunk in rows.chunks(MAX_BATCH_ROWS * width) {
            match self.round_trip(&mut ch, chunk, width) {
                Ok(p) => out.extend(p),
                Err(e) => {
                    ch.broken = Some(e.to_string());
                    return Err(e);
                }
            }
        }
        Ok(out)
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = ch.child.kill();
        let _ = ch.child.wait();
    }
}

/// Answer the line protocol on `input`/`output` with `model` until end of input.
pub fn serve<R: BufRead, W: Write>(
    model: &dyn PredictionModel,
    input: R,
    mut output: W,
) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Io(e.to_string());
    let mut lines = input.lines();
    let Some(first) = lines.next() else {
        return Err(ModelError::Protocol("no handshake".into()));
    };
    let hello: Handshake = serde_json::from_str(&first.map_err(io)?)
        .map_err(|e| ModelError::Protocol(format!("bad handshake: {e}")))?;
    if hello.features != model.feature_names() {
        return Err(ModelError::SchemaMismatch {
            expected: model.feature_names().to_vec(),
            found: hello.features,
        });
    }
    let width = model.feature_names().len();
    for line in lines {
        let line = line.map_err(io)?;
        let req: OwnedRequest =
            serde_json::from_str(&line).map_err(|e| ModelError::Protocol(format!("bad request: {e}")))?;
        if let Some(bad) = req.rows.iter().position(|r| r.len() != width) {
            return Err(ModelError::Protocol(format!(
                "row {bad} has {} values, expected {width}",
                req.rows[bad].len()
            )));
        }
        let preds = model.predict(&req.rows.concat())?;
        let reply = serde_json::to_string(&Reply { preds }).expect("predictions serialize");
        writeln!(output, "{reply}").map_err(io)?;
        output.flush().map_err(io)?;
    }
    Ok(())
}
