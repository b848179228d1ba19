//! Command-line driver: resolves settings from flags and config files,
//! writes a manifest, dispatches to the simulation library and writes outputs.
//!
//! `run` takes an argv-style iterator so tests can drive the binary in-process.

pub mod args;
mod commands;

use std::path::PathBuf;

use serde::Serialize;
use serde_json::{Map, Value};

pub use args::{Format, Subcommand};
use commands::{prepare, Common};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] stagelab::Error),
}

impl CliError {
    /// 2 for bad invocations, 1 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub subcommand: Subcommand,
    pub status: Status,
    pub master_seed: u64,
    /// Every setting of the run, defaults included; usable as `--config`.
    pub config: Map<String, Value>,
    pub started: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished: Option<String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub version: String,
}

/// What a completed run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    pub output_dir: PathBuf,
}

const DEFAULT_OUTPUT_DIR: &str = "stagelab-out";

fn now() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

fn take_common(map: &mut Map<String, Value>) -> Result<Common, CliError> {
    let bad = |k: &str, v: &Value| CliError::Usage(format!("invalid `{k}`: {v}"));
    let seed = match map.remove("seed") {
        None | Some(Value::Null) => {
            let s = rand::random::<u64>();
            log::warn!("no seed given; drew {s} from entropy (recorded in the manifest)");
            s
        }
        Some(v) => v.as_u64().ok_or_else(|| bad("seed", &v))?,
    };
    let output_dir = match map.remove("output_dir") {
        None | Some(Value::Null) => DEFAULT_OUTPUT_DIR.to_string(),
        Some(Value::String(s)) => s,
        Some(v) => return Err(bad("output_dir", &v)),
    };
    let format = match map.remove("format") {
        None | Some(Value::Null) => Format::default(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|_| bad("format", &v))?,
    };
    let workers = match map.remove("workers") {
        None | Some(Value::Null) => 0,
        Some(v) => v.as_u64().ok_or_else(|| bad("workers", &v))? as usize,
    };
    let workers = if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    };
    Ok(Common { seed, output_dir, format, workers })
}

fn save(manifest: &Manifest, dir: &std::path::Path) -> Result<(), CliError> {
    stagelab::io::write_json(manifest, &dir.join("manifest.json"))?;
    Ok(())
}

/// Runs one invocation. `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let (sub, mut map) = args::resolve(argv)?;
    let common = take_common(&mut map)?;
    let prepared = prepare(sub, map, &common)?;
    let dir = PathBuf::from(&common.output_dir);
    std::fs::create_dir_all(&dir)?;
    let mut manifest = Manifest {
        subcommand: sub,
        status: Status::Running,
        master_seed: common.seed,
        config: prepared.resolved,
        started: now(),
        finished: None,
        outputs: Vec::new(),
        error: None,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    save(&manifest, &dir)?;
    log::info!("{} started, writing to {}", sub.name(), dir.display());
    let result = (prepared.job)(&dir);
    manifest.finished = Some(now());
    match result {
        Ok(outputs) => {
            manifest.status = Status::Complete;
            manifest.outputs = outputs;
            save(&manifest, &dir)?;
            log::info!("{} complete: {} output file(s)", sub.name(), manifest.outputs.len());
            Ok(Outcome { manifest, output_dir: dir })
        }
        Err(e) => {
            manifest.status = Status::Failed;
            manifest.error = Some(e.to_string());
            save(&manifest, &dir)?;
            Err(e)
        }
    }
}
