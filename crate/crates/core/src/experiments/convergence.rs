use serde::{Deserialize, Serialize};

use super::{fmt, par_replicas, replica_seed, Statistic, StudyKind, StudyReport};
use crate::ctmc::{simulate_recorded, Recording, StopRule};
use crate::error::{ensure, Result};
use crate::io::Table;
use crate::model::{ModelParams, PopulationState};
use crate::path::SamplePath;
use crate::scaling::{perturbations_for_gamma, scaling_constants, Regime};
use crate::sde::{sample_at_times, SdeSpec, SdeVariant};
use crate::stats::{estimate, ks_two_sample, KsResult};

/// Rescaled chain against the limiting diffusion at fixed observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    #[serde(rename = "K")]
    pub stages: usize,
    pub gamma: Vec<f64>,
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    /// Observation times in rescaled units.
    pub times: Vec<f64>,
    /// Initial rescaled stage-1 value.
    #[serde(default = "one")]
    pub a1: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_threshold")]
    pub ks_threshold: f64,
    pub seed: u64,
    #[serde(skip)]
    pub workers: usize,
}

fn one() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_threshold() -> f64 {
    0.05
}

/// Below this many replicas per ensemble the verdict is flagged as underpowered.
const MIN_REPLICAS: usize = 1000;

impl ConvergenceConfig {
    pub fn new(stages: usize, n_grid: Vec<u64>, replicas: usize, times: Vec<f64>, seed: u64) -> Self {
        Self {
            stages,
            gamma: vec![0.0; stages],
            n_grid,
            replicas,
            times,
            a1: 1.0,
            dt: default_dt(),
            ks_threshold: default_threshold(),
            seed,
            workers: 0,
        }
    }
}

/// `samples[t][k]`: values of `A_k` at the `t`-th observation time, one per replica.
type Ensemble = Vec<Vec<Vec<f64>>>;

fn transpose(rows: Vec<Vec<Vec<f64>>>, times: usize, dim: usize) -> Ensemble {
    let mut out = vec![vec![Vec::with_capacity(rows.len()); dim]; times];
    for r in rows {
        for (ti, v) in r.into_iter().enumerate() {
            for (k, x) in v.into_iter().enumerate() {
                out[ti][k].push(x);
            }
        }
    }
    out
}

pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<StudyReport> {
    ensure(!cfg.n_grid.is_empty(), || "n_grid is empty".into())?;
    ensure(cfg.n_grid.windows(2).all(|w| w[0] < w[1]), || "n_grid must be increasing".into())?;
    ensure(cfg.replicas >= 2, || "need at least 2 replicas".into())?;
    ensure(!cfg.times.is_empty() && cfg.times.iter().all(|&t| t > 0.0 && t.is_finite()), || {
        "observation times must be positive".into()
    })?;
    ensure(cfg.times.windows(2).all(|w| w[0] < w[1]), || "observation times must increase".into())?;
    ensure(cfg.a1 > 0.0, || "initial stage-1 value must be positive".into())?;
    let spec = SdeSpec::new(cfg.stages, cfg.gamma.clone(), SdeVariant::Intermediate)?;
    let dim = cfg.stages + 2;
    let t_max = *cfg.times.last().unwrap();

    let mut report = StudyReport::new(StudyKind::Convergence, cfg, cfg.seed);
    if cfg.replicas < MIN_REPLICAS {
        report.flags.push(format!(
            "only {} replicas per ensemble (< {MIN_REPLICAS}): KS distances are noisy and the verdict has low power",
            cfg.replicas
        ));
    }

    let mut ctmc: Vec<Ensemble> = Vec::new();
    let mut initial_counts = Vec::new();
    for (i, &n) in cfg.n_grid.iter().enumerate() {
        let c = scaling_constants(Regime::Intermediate, n, cfg.stages, None)?;
        let (delta, epsilon) = perturbations_for_gamma(&cfg.gamma, &c)?;
        let params = ModelParams::new(n, cfg.stages, delta, epsilon)?;
        let a1 = c.stage1_count_for(cfg.a1).min(n);
        initial_counts.push(a1);
        let mut infected = vec![0; cfg.stages];
        infected[0] = a1;
        let init = PopulationState::from_infected(n, &infected)?;
        let grid: Vec<f64> = cfg.times.iter().map(|t| t * c.tau).collect();
        let horizon = t_max * c.tau;
        let rows = par_replicas(cfg.workers, cfg.replicas, |r| {
            let seed = replica_seed(cfg.seed, "convergence", i as u64, r);
            let tr = simulate_recorded(&params, &init, StopRule::Horizon(horizon), seed, Recording::Grid(grid.clone()))?;
            Ok((0..tr.len()).map(|j| c.rescale_counts(tr.state(j))).collect::<Vec<_>>())
        })?;
        ctmc.push(transpose(rows, cfg.times.len(), dim));
    }

    let sde_init: Vec<f64> = (0..dim).map(|k| if k == 1 { cfg.a1 } else { 0.0 }).collect();
    let sde_rows = par_replicas(cfg.workers, cfg.replicas, |r| {
        let mut rng = replica_seed(cfg.seed, "convergence-sde", 0, r).rng();
        sample_at_times(&spec, &sde_init, cfg.dt, &cfg.times, &mut rng)
    })?;
    let sde = transpose(sde_rows, cfg.times.len(), dim);

    let mut table = Table::new([
        "n", "time", "coordinate", "mean", "se", "sde_mean", "sde_se", "ks_vs_sde", "p_vs_sde", "ks_vs_previous_n", "p_vs_previous_n",
    ]);
    let mut converged_all = true;
    for (ti, &t) in cfg.times.iter().enumerate() {
        for k in 0..dim {
            let vs_sde: Vec<KsResult> = ctmc
                .iter()
                .map(|e| ks_two_sample(&e[ti][k], &sde[ti][k]))
                .collect::<Result<_>>()?;
            let consecutive: Vec<KsResult> = ctmc
                .windows(2)
                .map(|w| ks_two_sample(&w[0][ti][k], &w[1][ti][k]))
                .collect::<Result<_>>()?;
            let means: Vec<_> = ctmc.iter().map(|e| estimate(&e[ti][k])).collect();
            let sde_mean = estimate(&sde[ti][k]);
            for (i, &n) in cfg.n_grid.iter().enumerate() {
                let (prev_ks, prev_p) = if i == 0 {
                    (String::new(), String::new())
                } else {
                    (fmt(consecutive[i - 1].statistic), fmt(consecutive[i - 1].p_value))
                };
                table.push(vec![
                    n.to_string(),
                    fmt(t),
                    format!("A_{k}"),
                    fmt(means[i].mean),
                    fmt(means[i].se),
                    fmt(sde_mean.mean),
                    fmt(sde_mean.se),
                    fmt(vs_sde[i].statistic),
                    fmt(vs_sde[i].p_value),
                    prev_ks,
                    prev_p,
                ]);
            }
            let tag = format!("A_{k}/t={t}");
            if k == 1 {
                let d: Vec<f64> = vs_sde.iter().map(|r| r.statistic).collect();
                let decreasing = d.windows(2).all(|w| w[1] < w[0]);
                let below = *d.last().unwrap() < cfg.ks_threshold;
                let ok = decreasing && below;
                converged_all &= ok;
                let from = format!("ks_vs_sde/{tag}");
                report.put(format!("ks_decreasing/{tag}"), Statistic::derived(decreasing, cfg.replicas, &[&from]));
                report.put(format!("ks_final_below_threshold/{tag}"), Statistic::derived(below, cfg.replicas, &[&from]));
            }
            report.put(format!("ks_vs_sde/{tag}"), Statistic::ks(&vs_sde));
            if !consecutive.is_empty() {
                report.put(format!("ks_consecutive_n/{tag}"), Statistic::ks(&consecutive));
            }
            report.put(format!("mean/{tag}"), Statistic::estimates(&means));
            report.put(format!("sde_mean/{tag}"), Statistic::estimate(&sde_mean));
        }
    }
    report.put("converged", Statistic::derived(converged_all, cfg.replicas, &["ks_decreasing", "ks_final_below_threshold"]));
    report.put("initial_stage1_count", Statistic::exact(initial_counts));
    report.replica_count = cfg.replicas;
    report.tables.insert("convergence".into(), table);
    Ok(report)
}
