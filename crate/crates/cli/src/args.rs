//! Flags, config files and their merge into one flat key-value map.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Simulate,
    Sde,
    Ode,
    StudyConvergence,
    StudyOutbreak,
    StudyCollapse,
    StudyConjecture,
    Partition,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Sde => "sde",
            Subcommand::Ode => "ode",
            Subcommand::StudyConvergence => "study-convergence",
            Subcommand::StudyOutbreak => "study-outbreak",
            Subcommand::StudyCollapse => "study-collapse",
            Subcommand::StudyConjecture => "study-conjecture",
            Subcommand::Partition => "partition",
        }
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        <Self as ValueEnum>::from_str(s, false).map_err(|_| CliError::Usage(format!("unknown subcommand `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    StructuredText,
}

/// Every flag is optional here; requirements depend on the subcommand and
/// on what the config file already provides.
#[derive(Debug, Parser)]
#[command(name = "stagelab", version, about = "Multistage epidemic simulation laboratory", allow_negative_numbers = true)]
pub struct Flags {
    /// What to run. May be omitted when the config file is a manifest.
    #[arg(value_enum)]
    pub subcommand: Option<Subcommand>,

    /// JSON file with flat key-value settings, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long = "K")]
    pub stages: Option<usize>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub delta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    /// Initial state; its length decides how it is read.
    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,
    /// Stage-1 count of an otherwise susceptible population.
    #[arg(long)]
    pub init_stage1: Option<u64>,
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Diffusion variant: intermediate, small or feller.
    #[arg(long)]
    pub variant: Option<String>,
    /// ODE solver: rk4 or closed-form.
    #[arg(long)]
    pub method: Option<String>,
    /// absorption, horizon or stage1.
    #[arg(long)]
    pub stop: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub ode_dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long)]
    pub partitions: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Initial rescaled stage-1 value for studies.
    #[arg(long)]
    pub a1: Option<f64>,
    #[arg(long)]
    pub ks_threshold: Option<f64>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Also compute the limiting outbreak of each diffusion run.
    #[arg(long)]
    pub outbreak: bool,
}

/// Integral values become JSON integers so they fit count fields too.
fn number(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        if x >= 0.0 {
            Value::from(x as u64)
        } else {
            Value::from(x as i64)
        }
    } else {
        Value::from(x)
    }
}

fn numbers(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| number(x)).collect())
}

impl Flags {
    fn to_map(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        };
        put("K", self.stages.map(Value::from));
        put("n", self.n.map(Value::from));
        put("gamma", self.gamma.as_deref().map(numbers));
        put("delta", self.delta.as_deref().map(numbers));
        put("epsilon", self.epsilon.as_deref().map(numbers));
        put("init", self.init.as_deref().map(numbers));
        put("init_stage1", self.init_stage1.map(Value::from));
        put("regime", self.regime.clone().map(Value::from));
        put("alpha1", self.alpha1.map(number));
        put("tau", self.tau.map(number));
        put("variant", self.variant.clone().map(Value::from));
        put("method", self.method.clone().map(Value::from));
        put("stop", self.stop.clone().map(Value::from));
        put("dt", self.dt.map(number));
        put("ode_dt", self.ode_dt.map(number));
        put("horizon", self.horizon.map(number));
        put("replicas", self.replicas.map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("workers", self.workers.map(Value::from));
        put("output_dir", self.output_dir.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())));
        put("format", self.format.map(|f| serde_json::to_value(f).expect("enum serializes")));
        put("n_grid", self.n_grid.clone().map(Value::from));
        put("times", self.times.as_deref().map(numbers));
        put("window", self.window.map(number));
        put("partitions", self.partitions.map(Value::from));
        put("bootstrap", self.bootstrap.map(Value::from));
        put("a1", self.a1.map(number));
        put("ks_threshold", self.ks_threshold.map(number));
        put("level", self.level.map(number));
        if self.outbreak {
            put("outbreak", Some(Value::Bool(true)));
        }
        m
    }
}

/// A flat config file, or the `config` object of a manifest together with its subcommand.
fn read_config(path: &Path) -> Result<(Option<Subcommand>, Map<String, Value>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(mut obj) = value else {
        return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
    };
    let sub = match obj.remove("subcommand") {
        Some(Value::String(s)) => Some(Subcommand::parse(&s)?),
        Some(other) => return Err(CliError::Usage(format!("`subcommand` must be a string, got {other}"))),
        None => None,
    };
    if let Some(Value::Object(inner)) = obj.get("config") {
        return Ok((sub, inner.clone()));
    }
    for (k, v) in &obj {
        if v.is_object() {
            return Err(CliError::Usage(format!("config key `{k}` is nested; only flat key-value configs are accepted")));
        }
    }
    Ok((sub, obj))
}

/// Parses argv and merges it over the config file; flags win.
pub fn resolve<I, T>(argv: I) -> Result<(Subcommand, Map<String, Value>), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let flags = Flags::try_parse_from(argv)?;
    let (file_sub, mut map) = match &flags.config {
        Some(p) => read_config(p)?,
        None => (None, Map::new()),
    };
    let sub = match (flags.subcommand, file_sub) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Usage(format!(
                "subcommand `{}` conflicts with `{}` recorded in the config file",
                a.name(),
                b.name()
            )))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(CliError::Usage("missing subcommand".into())),
    };
    map.extend(flags.to_map());
    Ok((sub, map))
}

/// Fails with every missing name at once.
pub fn require(map: &Map<String, Value>, names: &[&str]) -> Result<(), CliError> {
    let missing: Vec<&str> = names.iter().copied().filter(|k| map.get(*k).is_none_or(Value::is_null)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("missing required field(s): {}", missing.join(", "))))
    }
}
