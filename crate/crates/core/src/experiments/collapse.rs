//! After stage 1 dies out the rescaled chain should follow the unforced ODE.

use serde::{Deserialize, Serialize};

use super::{fmt, par_replicas, replica_seed, Statistic, StudyKind, StudyReport};
use crate::ctmc::{shift_and_project, simulate_path, StopRule, Trajectory};
use crate::error::{ensure, Result};
use crate::io::Table;
use crate::model::{ModelParams, PopulationState};
use crate::ode::{integrate_ode, Forcing, OdeConfig};
use crate::scaling::{perturbations_for_gamma, scaling_constants, Regime, ScalingConstants};
use crate::stats::{estimate, mann_whitney_less, quantile_sorted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseConfig {
    #[serde(rename = "K")]
    pub stages: usize,
    pub gamma: Vec<f64>,
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    /// Length of the comparison window after extinction, rescaled units.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Replicas whose stage 1 is still alive at this rescaled time are excluded.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "one")]
    pub a1: f64,
    #[serde(default = "default_ode_dt")]
    pub ode_dt: f64,
    /// Significance level of the one-sided rank test between consecutive sizes.
    #[serde(default = "default_level")]
    pub level: f64,
    pub seed: u64,
    #[serde(skip)]
    pub workers: usize,
}

fn default_window() -> f64 {
    1.0
}
fn default_horizon() -> f64 {
    50.0
}
fn one() -> f64 {
    1.0
}
fn default_ode_dt() -> f64 {
    1e-3
}
fn default_level() -> f64 {
    0.01
}

impl CollapseConfig {
    pub fn new(stages: usize, n_grid: Vec<u64>, replicas: usize, seed: u64) -> Self {
        Self {
            stages,
            gamma: vec![0.0; stages],
            n_grid,
            replicas,
            window: default_window(),
            horizon: default_horizon(),
            a1: 1.0,
            ode_dt: default_ode_dt(),
            level: default_level(),
            seed,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ReplicaOutcome {
    /// Rescaled extinction time of stage 1.
    t0: f64,
    deviation: f64,
    stage2_at_t0: u64,
    projection_ok: bool,
}

/// Sup-norm distance between the rescaled chain after `t0` and the ODE
/// started from its state there, relative to the sup of the ODE solution.
fn deviation(tr: &Trajectory, c: &ScalingConstants, t0: f64, cfg: &CollapseConfig) -> Result<f64> {
    let k = cfg.stages;
    let a = c.rescale_counts(tr.state_at(t0).expect("absorption runs are known everywhere"));
    let x0: Vec<f64> = std::iter::once(a[0]).chain(a[2..].iter().copied()).collect();
    let sol = integrate_ode(&x0, &Forcing::Zero, &cfg.gamma, OdeConfig { dt: cfg.ode_dt, horizon: cfg.window })?;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (i, &s) in sol.times.iter().enumerate() {
        let counts = tr.state_at(t0 + s * c.tau).expect("absorption runs are known everywhere");
        let resc = c.rescale_counts(counts);
        let x = sol.row(i);
        for (j, coord) in std::iter::once(0).chain(2..=k + 1).enumerate() {
            diff = diff.max((resc[coord] - x[j]).abs());
            scale = scale.max(x[j].abs());
        }
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

pub fn collapse_check(cfg: &CollapseConfig) -> Result<StudyReport> {
    ensure(cfg.stages >= 2, || "state space collapse needs K >= 2".into())?;
    ensure(!cfg.n_grid.is_empty() && cfg.n_grid.windows(2).all(|w| w[0] < w[1]), || {
        "n_grid must be nonempty and increasing".into()
    })?;
    ensure(cfg.replicas > 0, || "replicas must be > 0".into())?;
    ensure(cfg.window > 0.0 && cfg.horizon > 0.0, || "window and horizon must be positive".into())?;
    let k = cfg.stages;
    let mut report = StudyReport::new(StudyKind::Collapse, cfg, cfg.seed);
    let mut per_replica = Table::new(["n", "replica", "T0_rescaled", "a_2_at_T0", "deviation", "excluded"]);
    let mut deviations: Vec<Vec<f64>> = Vec::new();
    let mut exclusions = Vec::new();
    let mut projection_failures = 0usize;
    let mut exponent_estimates = Vec::new();
    let mut medians = Vec::new();

    for (i, &n) in cfg.n_grid.iter().enumerate() {
        let c = scaling_constants(Regime::Intermediate, n, k, None)?;
        let (delta, epsilon) = perturbations_for_gamma(&cfg.gamma, &c)?;
        let params = ModelParams::new(n, k, delta, epsilon)?;
        let mut infected = vec![0; k];
        infected[0] = c.stage1_count_for(cfg.a1).min(n);
        let init = PopulationState::from_infected(n, &infected)?;
        let outcomes = par_replicas(cfg.workers, cfg.replicas, |r| {
            let seed = replica_seed(cfg.seed, "collapse", i as u64, r);
            let tr = simulate_path(&params, &init, StopRule::Absorption, seed)?;
            let t0_model = tr.stage1_extinction_time();
            let t0 = t0_model / c.tau;
            if t0 > cfg.horizon {
                return Ok(ReplicaOutcome { t0, deviation: f64::NAN, stage2_at_t0: 0, projection_ok: true });
            }
            let projection_ok = shift_and_project(&tr, t0_model).and_then(|p| p.check_invariants()).is_ok();
            let stage2 = tr.state_at(t0_model).map(|s| s[2]).unwrap_or(0);
            Ok(ReplicaOutcome { t0, deviation: deviation(&tr, &c, t0_model, cfg)?, stage2_at_t0: stage2, projection_ok })
        })?;
        let mut dev = Vec::new();
        let mut excluded = 0usize;
        let mut exps = Vec::new();
        for (r, o) in outcomes.iter().enumerate() {
            let out = o.deviation.is_nan();
            excluded += out as usize;
            projection_failures += (!o.projection_ok) as usize;
            if !out {
                dev.push(o.deviation);
                if o.stage2_at_t0 > 0 {
                    exps.push((o.stage2_at_t0 as f64).ln() / (n as f64).ln());
                }
            }
            per_replica.push(vec![
                n.to_string(),
                r.to_string(),
                fmt(o.t0),
                o.stage2_at_t0.to_string(),
                if out { String::new() } else { fmt(o.deviation) },
                out.to_string(),
            ]);
        }
        let mut sorted = dev.clone();
        sorted.sort_by(f64::total_cmp);
        medians.push(quantile_sorted(&sorted, 0.5));
        exclusions.push(excluded);
        exponent_estimates.push(estimate(&exps));
        deviations.push(dev);
    }

    let means: Vec<_> = deviations.iter().map(|d| estimate(d)).collect();
    report.put("deviation_mean", Statistic::estimates(&means));
    report.put(
        "deviation_median",
        Statistic::derived(medians, deviations.iter().map(Vec::len).collect::<Vec<_>>(), &["per-replica table"]),
    );
    report.put("excluded", Statistic::derived(exclusions.clone(), cfg.replicas, &[]));
    if exclusions.iter().any(|&e| e > 0) {
        report.flags.push(format!("replicas excluded (stage 1 alive at rescaled time {}): {:?}", cfg.horizon, exclusions));
    }
    let mut decreasing = true;
    for (i, w) in deviations.windows(2).enumerate() {
        let (a, b) = (cfg.n_grid[i], cfg.n_grid[i + 1]);
        let name = format!("rank_test/n={b}_below_n={a}");
        if w[0].is_empty() || w[1].is_empty() {
            decreasing = false;
            continue;
        }
        let t = mann_whitney_less(&w[1], &w[0])?;
        decreasing &= t.p_less < cfg.level;
        report.put(
            name,
            Statistic {
                value: t.z.into(),
                replicas: vec![w[1].len(), w[0].len()].into(),
                uncertainty: super::Uncertainty::PValue { p: t.p_less.into() },
            },
        );
    }
    if cfg.n_grid.len() > 1 {
        report.put("deviation_decreases_in_n", Statistic::derived(decreasing, cfg.replicas, &["rank_test"]));
    }
    // the shifted chain has K-1 stages; its stage-1 scale exponent should exceed 1/(K+1)
    let boundary = 1.0 / (k as f64 + 1.0);
    report.put("shifted_stage1_exponent", Statistic::estimates(&exponent_estimates));
    report.put("shifted_regime_boundary_exponent", Statistic::exact(boundary));
    report.put(
        "shifted_in_large_regime",
        Statistic::derived(
            exponent_estimates.iter().map(|e| e.mean > boundary).collect::<Vec<_>>(),
            cfg.replicas,
            &["shifted_stage1_exponent"],
        ),
    );
    report.put("projection_failures", Statistic::derived(projection_failures, cfg.replicas * cfg.n_grid.len(), &[]));
    report.replica_count = cfg.replicas;
    report.tables.insert("collapse_replicas".into(), per_replica);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn needs_several_stages() {
        assert!(collapse_check(&CollapseConfig::new(1, vec![1000], 10, 0)).is_err());
    }

    #[test]
    fn small_run() {
        let mut cfg = CollapseConfig::new(2, vec![2000, 20000], 40, 4);
        cfg.ode_dt = 1e-2;
        let r = collapse_check(&cfg).unwrap();
        assert_eq!(r.stat("projection_failures").unwrap().value, 0);
        assert!(r.stat("rank_test/n=20000_below_n=2000").is_some());
        assert_eq!(r.tables["collapse_replicas"].rows.len(), 80);
    }

    #[test]
    fn empty_post_extinction_means_zero_deviation() {
        // nobody beyond stage 1: the chain is absorbed with all stages at zero
        let n = 1000;
        let c = scaling_constants(Regime::Intermediate, n, 2, None).unwrap();
        let p = ModelParams::critical(n, 2).unwrap();
        let tr = simulate_path(&p, &PopulationState::from_infected(n, &[0, 0]).unwrap(), StopRule::Absorption, crate::rng::RngSeed::new(0, 0)).unwrap();
        let cfg = CollapseConfig::new(2, vec![n], 1, 0);
        assert_eq!(deviation(&tr, &c, 0.0, &cfg).unwrap(), 0.0);
    }
}
