//! Typed settings per subcommand and the work each one does.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use stagelab::ctmc::{simulate_path, StopRule};
use stagelab::experiments::{
    collapse_check, conjecture_exponents, convergence_study, outbreak_scaling_fit, random_partition, replica_seed, CollapseConfig,
    ConjectureConfig, ConvergenceConfig, OutbreakConfig, StudyReport,
};
use stagelab::io::{diffusion_table, ode_table, rescaled_table, trajectory_table, write_json, Table};
use stagelab::ode::{closed_form_y0, integrate_ode, uniform_grid, verify_properties, FixedPoint, Forcing, OdeConfig, Tolerances};
use stagelab::scaling::{perturbations_for_gamma, perturbations_for_tau, rescale, scaling_constants, Regime};
use stagelab::sde::{integrate_sde, terminal_outbreak, SdeConfig, SdeSpec, SdeVariant, TailConfig};
use stagelab::{ModelParams, PopulationState, RngSeed};

use crate::args::{require, Format, Subcommand};
use crate::CliError;

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct Common {
    pub seed: u64,
    pub output_dir: String,
    pub format: Format,
    pub workers: usize,
}

pub type Job = Box<dyn FnOnce(&Path) -> Result<Vec<String>, CliError>>;

/// A validated run: its fully resolved settings and the deferred work.
pub struct Prepared {
    pub resolved: Map<String, Value>,
    pub job: Job,
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Deserializes `map` into `T`, rejecting keys `T` does not know.
fn typed<T: DeserializeOwned + Serialize>(sub: Subcommand, map: &Map<String, Value>) -> Result<(T, Map<String, Value>), CliError> {
    let cfg: T = serde_json::from_value(Value::Object(map.clone())).map_err(|e| usage(format!("invalid {} configuration: {e}", sub.name())))?;
    let Value::Object(back) = serde_json::to_value(&cfg).expect("configs serialize") else {
        unreachable!("configs are structs")
    };
    let unknown: Vec<&str> = map.keys().filter(|k| !back.contains_key(*k)).map(String::as_str).collect();
    if !unknown.is_empty() {
        return Err(usage(format!("unknown field(s) for {}: {}", sub.name(), unknown.join(", "))));
    }
    Ok((cfg, back))
}

fn write_table(dir: &Path, name: &str, t: &Table, format: Format) -> Result<String, CliError> {
    match format {
        Format::Csv => {
            let f = format!("{name}.csv");
            t.save(&dir.join(&f))?;
            Ok(f)
        }
        Format::StructuredText => {
            let f = format!("{name}.json");
            let records: Vec<Map<String, Value>> = t
                .rows
                .iter()
                .map(|r| t.headers.iter().cloned().zip(r.iter().map(|c| cell(c))).collect())
                .collect();
            write_json(&records, &dir.join(&f))?;
            Ok(f)
        }
    }
}

fn cell(c: &str) -> Value {
    if c.is_empty() {
        return Value::Null;
    }
    match c.parse::<f64>() {
        Ok(x) if x.is_finite() => serde_json::Number::from_f64(x).map_or_else(|| Value::from(c), Value::Number),
        _ => Value::from(c),
    }
}

fn numbered(base: &str, r: usize, count: usize) -> String {
    if count == 1 {
        base.to_string()
    } else {
        format!("{base}_{r}")
    }
}

fn one() -> usize {
    1
}

pub fn prepare(sub: Subcommand, mut map: Map<String, Value>, common: &Common) -> Result<Prepared, CliError> {
    let zero_gamma = matches!(sub, Subcommand::StudyConvergence | Subcommand::StudyOutbreak | Subcommand::StudyCollapse);
    if zero_gamma && !map.contains_key("gamma") {
        if let Some(k) = map.get("K").and_then(Value::as_u64) {
            map.insert("gamma".into(), Value::from(vec![0.0; k as usize]));
        }
    }
    let (mut resolved, job) = match sub {
        Subcommand::Simulate => simulate(map, common)?,
        Subcommand::Sde => sde(map, common)?,
        Subcommand::Ode => ode(map, common)?,
        Subcommand::Partition => partition(map, common)?,
        Subcommand::StudyConvergence => {
            require(&map, &["K", "n_grid", "replicas", "times"])?;
            map.insert("seed".into(), common.seed.into());
            let (mut cfg, back) = typed::<ConvergenceConfig>(sub, &map)?;
            cfg.workers = common.workers;
            study(back, common, move || convergence_study(&cfg))
        }
        Subcommand::StudyOutbreak => {
            require(&map, &["K", "n_grid", "replicas"])?;
            map.insert("seed".into(), common.seed.into());
            let (mut cfg, back) = typed::<OutbreakConfig>(sub, &map)?;
            cfg.workers = common.workers;
            study(back, common, move || outbreak_scaling_fit(&cfg))
        }
        Subcommand::StudyCollapse => {
            require(&map, &["K", "n_grid", "replicas"])?;
            map.insert("seed".into(), common.seed.into());
            let (mut cfg, back) = typed::<CollapseConfig>(sub, &map)?;
            cfg.workers = common.workers;
            study(back, common, move || collapse_check(&cfg))
        }
        Subcommand::StudyConjecture => {
            require(&map, &["K", "n_grid", "replicas"])?;
            map.insert("seed".into(), common.seed.into());
            let (mut cfg, back) = typed::<ConjectureConfig>(sub, &map)?;
            cfg.workers = common.workers;
            study(back, common, move || conjecture_exponents(&cfg))
        }
    };
    let Value::Object(c) = serde_json::to_value(common).expect("settings serialize") else {
        unreachable!()
    };
    resolved.extend(c);
    Ok(Prepared { resolved, job })
}

fn study<F>(resolved: Map<String, Value>, common: &Common, f: F) -> (Map<String, Value>, Job)
where
    F: FnOnce() -> stagelab::Result<StudyReport> + 'static,
{
    let format = common.format;
    let job: Job = Box::new(move |dir| {
        let report = f()?;
        write_json(&report, &dir.join("report.json"))?;
        let mut out = vec!["report.json".to_string()];
        for (name, t) in &report.tables {
            out.push(write_table(dir, name, t, format)?);
        }
        for flag in &report.flags {
            log::warn!("{flag}");
        }
        Ok(out)
    });
    (resolved, job)
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulateConfig {
    #[serde(rename = "K")]
    stages: usize,
    n: u64,
    delta: Option<Vec<f64>>,
    epsilon: Option<Vec<f64>>,
    gamma: Option<Vec<f64>>,
    regime: Option<Regime>,
    alpha1: Option<f64>,
    tau: Option<f64>,
    /// `K + 2` counts, or `K` infected counts.
    init: Option<Vec<u64>>,
    init_stage1: Option<u64>,
    #[serde(default = "absorption")]
    stop: String,
    /// Model-time horizon for `stop = horizon`.
    horizon: Option<f64>,
    #[serde(default = "one")]
    replicas: usize,
}

fn absorption() -> String {
    "absorption".into()
}

fn simulate(map: Map<String, Value>, common: &Common) -> Result<(Map<String, Value>, Job), CliError> {
    require(&map, &["K", "n"])?;
    let given = |k: &str| map.get(k).is_some_and(|v| !v.is_null());
    if !given("init") && !given("init_stage1") {
        return Err(usage("missing required field(s): init (or init_stage1)"));
    }
    let (cfg, back) = typed::<SimulateConfig>(Subcommand::Simulate, &map)?;
    let k = cfg.stages;
    let constants = match cfg.regime {
        Some(r) => Some(scaling_constants(r, cfg.n, k, cfg.alpha1).map_err(usage)?),
        None if cfg.alpha1.is_some() => return Err(usage("alpha1 needs a regime")),
        None => None,
    };
    let (delta, epsilon) = match (&cfg.gamma, &cfg.delta, &cfg.epsilon) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => return Err(usage("give either gamma or delta/epsilon, not both")),
        (Some(g), None, None) => match (cfg.tau, &constants) {
            (Some(tau), _) => perturbations_for_tau(g, tau, k).map_err(usage)?,
            (None, Some(c)) => perturbations_for_gamma(g, c).map_err(usage)?,
            (None, None) => return Err(usage("gamma needs tau or a regime to fix the perturbations")),
        },
        (None, d, e) => (d.clone().unwrap_or_else(|| vec![0.0; k]), e.clone().unwrap_or_else(|| vec![0.0; k])),
    };
    let params = ModelParams::new(cfg.n, k, delta, epsilon).map_err(usage)?;
    let init = match (&cfg.init, cfg.init_stage1) {
        (Some(_), Some(_)) => return Err(usage("give either init or init_stage1, not both")),
        (Some(v), None) if v.len() == k + 2 => PopulationState::new(v.clone()),
        (Some(v), None) if v.len() == k => PopulationState::from_infected(cfg.n, v).map_err(usage)?,
        (Some(v), None) => return Err(usage(format!("init has {} entries; expected K = {k} infected counts or K + 2 = {} counts", v.len(), k + 2))),
        (None, Some(a1)) => {
            let mut inf = vec![0; k];
            inf[0] = a1;
            PopulationState::from_infected(cfg.n, &inf).map_err(usage)?
        }
        (None, None) => unreachable!("checked above"),
    };
    init.check_against(&params).map_err(usage)?;
    let stop = match (cfg.stop.as_str(), cfg.horizon) {
        ("absorption", _) => StopRule::Absorption,
        ("stage1", _) => StopRule::Stage1Extinction,
        ("horizon", Some(h)) if h >= 0.0 => StopRule::Horizon(h),
        ("horizon", Some(h)) => return Err(usage(format!("horizon must be >= 0, got {h}"))),
        ("horizon", None) => return Err(usage("missing required field(s): horizon")),
        (other, _) => return Err(usage(format!("unknown stop rule `{other}` (expected absorption, horizon or stage1)"))),
    };
    if cfg.replicas == 0 {
        return Err(usage("replicas must be > 0"));
    }
    let (seed, format, count) = (common.seed, common.format, cfg.replicas);
    let job: Job = Box::new(move |dir| {
        let mut out = Vec::new();
        let mut summaries = Vec::new();
        for r in 0..count {
            let tr = simulate_path(&params, &init, stop, RngSeed::new(seed, r as u64))?;
            out.push(write_table(dir, &numbered("trajectory", r, count), &trajectory_table(&tr), format)?);
            if let Some(c) = &constants {
                out.push(write_table(dir, &numbered("rescaled", r, count), &rescaled_table(&rescale(&tr, c)?), format)?);
            }
            summaries.push(tr.summary());
        }
        write_json(&summaries, &dir.join("summary.json"))?;
        out.push("summary.json".into());
        if let Some(c) = &constants {
            write_json(c, &dir.join("scaling.json"))?;
            out.push("scaling.json".into());
        }
        Ok(out)
    });
    Ok((back, job))
}

#[derive(Debug, Serialize, Deserialize)]
struct SdeArgs {
    #[serde(rename = "K")]
    stages: Option<usize>,
    gamma: Option<Vec<f64>>,
    #[serde(default = "intermediate", alias = "regime")]
    variant: String,
    init: Vec<f64>,
    #[serde(default = "default_dt")]
    dt: f64,
    horizon: f64,
    #[serde(default = "one")]
    replicas: usize,
    #[serde(default = "one")]
    stride: usize,
    /// Also report the limiting outbreak of each run.
    #[serde(default)]
    outbreak: bool,
}

fn intermediate() -> String {
    "intermediate".into()
}

fn default_dt() -> f64 {
    1e-3
}

fn sde(mut map: Map<String, Value>, common: &Common) -> Result<(Map<String, Value>, Job), CliError> {
    if let Some(r) = map.remove("regime") {
        if map.contains_key("variant") {
            return Err(usage("give either variant or regime, not both"));
        }
        map.insert("variant".into(), r);
    }
    let feller = map.get("variant").and_then(Value::as_str) == Some("feller");
    require(&map, if feller { &["init", "horizon"] } else { &["K", "init", "horizon"] })?;
    let (cfg, back) = typed::<SdeArgs>(Subcommand::Sde, &map)?;
    let spec = match cfg.variant.as_str() {
        "feller" => {
            let g = cfg.gamma.clone().unwrap_or_else(|| vec![0.0]);
            if g.len() != 1 {
                return Err(usage(format!("the Feller diffusion takes one gamma, got {}", g.len())));
            }
            SdeSpec::feller(g[0])
        }
        v @ ("intermediate" | "small") => {
            let k = cfg.stages.expect("required above");
            let variant = if v == "small" { SdeVariant::Small } else { SdeVariant::Intermediate };
            SdeSpec::new(k, cfg.gamma.clone().unwrap_or_else(|| vec![0.0; k]), variant).map_err(usage)?
        }
        other => return Err(usage(format!("unknown variant `{other}` (expected intermediate, small or feller)"))),
    };
    if cfg.init.len() != spec.dim() {
        return Err(usage(format!("init has {} entries, expected {}", cfg.init.len(), spec.dim())));
    }
    if cfg.outbreak && spec.variant != SdeVariant::Intermediate {
        return Err(usage("the limiting outbreak is defined for the intermediate variant"));
    }
    if cfg.replicas == 0 || cfg.stride == 0 {
        return Err(usage("replicas and stride must be > 0"));
    }
    let config = SdeConfig::new(cfg.dt, cfg.horizon).with_stride(cfg.stride);
    config.validate().map_err(usage)?;
    let seed = common.seed;
    let format = common.format;
    let job: Job = Box::new(move |dir| {
        let mut out = Vec::new();
        let mut records = Vec::new();
        for r in 0..cfg.replicas {
            let s = RngSeed::new(seed, r as u64);
            let path = integrate_sde(&spec, &cfg.init, config, s)?;
            out.push(write_table(dir, &numbered("diffusion", r, cfg.replicas), &diffusion_table(&path, spec.variant), format)?);
            if cfg.outbreak {
                // the noisy phase runs until stage 1 dies out, not just to the plotted horizon
                let tail = TailConfig::default();
                records.push(terminal_outbreak(&spec, &cfg.init, SdeConfig::new(cfg.dt, tail.max_horizon), tail, s)?);
            }
        }
        if cfg.outbreak {
            let mut t = Table::new(["stream", "dt", "T0_A1_grid", "A_tail", "A_Kplus1_inf"]);
            for rec in &records {
                t.push(vec![rec.seed.stream.to_string(), rec.dt.to_string(), rec.t0_grid.to_string(), rec.tail.to_string(), rec.outbreak.to_string()]);
            }
            out.push(write_table(dir, "outbreak", &t, format)?);
        }
        Ok(out)
    });
    Ok((back, job))
}

#[derive(Debug, Serialize, Deserialize)]
struct OdeArgs {
    #[serde(rename = "K")]
    stages: usize,
    gamma: Option<Vec<f64>>,
    /// `x_0, x_2, ..., x_{K+1}`.
    init: Vec<f64>,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "ten")]
    horizon: f64,
    #[serde(default = "rk4")]
    method: String,
}

fn ten() -> f64 {
    10.0
}

fn rk4() -> String {
    "rk4".into()
}

fn ode(map: Map<String, Value>, common: &Common) -> Result<(Map<String, Value>, Job), CliError> {
    require(&map, &["K", "init"])?;
    let (cfg, back) = typed::<OdeArgs>(Subcommand::Ode, &map)?;
    let k = cfg.stages;
    let gamma = cfg.gamma.clone().unwrap_or_else(|| vec![0.0; k]);
    if gamma.len() != k || cfg.init.len() != k + 1 {
        return Err(usage(format!(
            "K = {k} needs {k} gamma values and {} initial values (x_0, x_2, ..., x_{{K+1}}); got {} and {}",
            k + 1,
            gamma.len(),
            cfg.init.len()
        )));
    }
    let config = OdeConfig { dt: cfg.dt, horizon: cfg.horizon };
    let grid = uniform_grid(cfg.dt, cfg.horizon).map_err(usage)?;
    let closed = match cfg.method.as_str() {
        "rk4" => false,
        "closed-form" => true,
        other => return Err(usage(format!("unknown method `{other}` (expected rk4 or closed-form)"))),
    };
    let format = common.format;
    let job: Job = Box::new(move |dir| {
        let sol = if closed {
            closed_form_y0(&cfg.init, &gamma, &grid, FixedPoint::default())?
        } else {
            integrate_ode(&cfg.init, &Forcing::Zero, &gamma, config)?
        };
        let mut out = vec![write_table(dir, "ode", &ode_table(&sol), format)?];
        write_json(&verify_properties(&sol, Tolerances::default()), &dir.join("diagnostics.json"))?;
        out.push("diagnostics.json".into());
        Ok(out)
    });
    Ok((back, job))
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionArgs {
    #[serde(rename = "K")]
    stages: usize,
    n: u64,
    #[serde(default = "one")]
    replicas: usize,
}

fn partition(map: Map<String, Value>, common: &Common) -> Result<(Map<String, Value>, Job), CliError> {
    require(&map, &["K", "n"])?;
    let (cfg, back) = typed::<PartitionArgs>(Subcommand::Partition, &map)?;
    let params = ModelParams::critical(cfg.n, cfg.stages).map_err(usage)?;
    let (seed, format) = (common.seed, common.format);
    let job: Job = Box::new(move |dir| {
        let k = cfg.stages;
        let mut blocks = Table::new(
            ["replica", "block", "size"].into_iter().map(String::from).chain((1..=k).map(|s| format!("N_{s}"))),
        );
        let mut summary = Table::new(["replica", "blocks", "largest", "size_biased_mean"]);
        for r in 0..cfg.replicas {
            let p = random_partition(&params, replica_seed(seed, "partition", 0, r as u64))?;
            for (b, (size, counters)) in p.sizes.iter().zip(&p.counters).enumerate() {
                let mut row = vec![r.to_string(), b.to_string(), size.to_string()];
                row.extend(counters.iter().map(u64::to_string));
                blocks.push(row);
            }
            summary.push(vec![
                r.to_string(),
                p.sizes.len().to_string(),
                p.largest().to_string(),
                p.size_biased_mean().to_string(),
            ]);
        }
        Ok(vec![write_table(dir, "partition", &blocks, format)?, write_table(dir, "partition_summary", &summary, format)?])
    });
    Ok((back, job))
}

