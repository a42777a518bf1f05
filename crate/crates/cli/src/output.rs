//! Output formats, run manifests and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Structured,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one run. Everything except `timestamp` is a function of the
/// inputs, so structured outputs are byte-identical across reruns once the
/// timestamp is pinned with `SOURCE_DATE_EPOCH`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Digest of the compact JSON of the result section.
    pub result_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Inputs read during a run, plus the seed in effect.
#[derive(Debug, Default)]
pub struct RunContext {
    pub command: String,
    pub arguments: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
}

impl RunContext {
    /// Reads a UTF-8 input file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::input(path, e.to_string()))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        String::from_utf8(bytes).map_err(|_| CliError::input(path, "file is not valid UTF-8"))
    }

    pub fn manifest(&self, result: &Value) -> Manifest {
        let compact = serde_json::to_vec(result).expect("JSON values serialize");
        Manifest {
            command: self.command.clone(),
            arguments: self.arguments.clone(),
            inputs: self.inputs.clone(),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp: timestamp(),
            result_sha256: sha256_hex(&compact),
        }
    }
}

/// What a subcommand produces: a report (text and structured forms) and
/// optionally a data artifact such as a design file or dataset.
pub struct Outcome {
    pub text: String,
    pub result: Value,
    pub artifact: Option<Artifact>,
    /// Set when the run completed but a self-check failed; the report is
    /// still written and the process exits non-zero.
    pub failure: Option<String>,
}

pub struct Artifact {
    pub contents: Vec<u8>,
    /// Human name used when the artifact goes to stdout.
    pub kind: &'static str,
}

impl Outcome {
    pub fn report(text: String, result: Value) -> Self {
        Outcome { text, result, artifact: None, failure: None }
    }

    pub fn with_artifact(mut self, kind: &'static str, contents: Vec<u8>) -> Self {
        self.artifact = Some(Artifact { contents, kind });
        self
    }
}

fn render_report(ctx: &RunContext, outcome: &Outcome, format: Format) -> Vec<u8> {
    match format {
        Format::Text => outcome.text.clone().into_bytes(),
        Format::Structured => {
            let doc = serde_json::json!({
                "manifest": ctx.manifest(&outcome.result),
                "result": outcome.result,
            });
            let mut out = serde_json::to_vec_pretty(&doc).expect("JSON values serialize");
            out.push(b'\n');
            out
        }
    }
}

/// Writes the outcome. With `--out`, a report-only command writes its report
/// there. A command with an artifact writes the artifact there, a sidecar
/// `<out>.manifest.json`, and prints the report. Without `--out` everything
/// goes to stdout.
pub fn emit(ctx: &RunContext, outcome: &Outcome, format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let report = render_report(ctx, outcome, format);
    match (out, &outcome.artifact) {
        (None, None) => write_stdout(&report),
        (None, Some(artifact)) => {
            write_stdout(&artifact.contents)?;
            if !report.is_empty() {
                eprintln!("-- {} written to stdout; report follows --", artifact.kind);
                std::io::stderr().write_all(&report).map_err(|e| CliError::Output(e.to_string()))?;
            }
            Ok(())
        }
        (Some(path), None) => write_atomic(&[(path.to_path_buf(), report)]),
        (Some(path), Some(artifact)) => {
            let manifest = serde_json::json!({ "manifest": ctx.manifest(&outcome.result) });
            let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("JSON values serialize");
            manifest_bytes.push(b'\n');
            write_atomic(&[
                (path.to_path_buf(), artifact.contents.clone()),
                (sidecar(path), manifest_bytes),
            ])?;
            write_stdout(&report)
        }
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn write_stdout(bytes: &[u8]) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Output(e.to_string()))
}

/// Stages every file in its destination directory, then renames them into
/// place, so a failure never leaves a partially written file behind.
pub fn write_atomic(files: &[(PathBuf, Vec<u8>)]) -> Result<(), CliError> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::input(&dir, e.to_string()))?;
        tmp.write_all(bytes).and_then(|_| tmp.flush()).map_err(|e| CliError::Output(e.to_string()))?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| CliError::input(path, e.error.to_string()))?;
    }
    Ok(())
}
