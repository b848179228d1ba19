use serde::{Deserialize, Serialize};

use super::{fmt, par_replicas, replica_seed, Statistic, StudyKind, StudyReport};
use crate::ctmc::{simulate_recorded, Recording, StopRule};
use crate::error::{contract, ensure, Result};
use crate::io::Table;
use crate::model::{ModelParams, PopulationState};
use crate::scaling::{perturbations_for_gamma, scaling_constants, Regime};
use crate::stats::{estimate, loglog_fit};

/// Growth of the mean outbreak from the intermediate initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutbreakConfig {
    #[serde(rename = "K")]
    pub stages: usize,
    pub gamma: Vec<f64>,
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    pub seed: u64,
    #[serde(skip)]
    pub workers: usize,
}

fn default_bootstrap() -> usize {
    1000
}

impl OutbreakConfig {
    pub fn new(stages: usize, n_grid: Vec<u64>, replicas: usize, seed: u64) -> Self {
        Self { stages, gamma: vec![0.0; stages], n_grid, replicas, bootstrap: default_bootstrap(), seed, workers: 0 }
    }
}

/// Smallest integer `r` with `r^p >= n`.
pub fn ceil_root(n: u64, p: u32) -> u64 {
    let mut r = (n as f64).powf(1.0 / p as f64).round() as u64;
    let pow = |r: u64| (r as u128).pow(p);
    while pow(r) < n as u128 {
        r += 1;
    }
    while r > 1 && pow(r - 1) >= n as u128 {
        r -= 1;
    }
    r
}

pub fn outbreak_scaling_fit(cfg: &OutbreakConfig) -> Result<StudyReport> {
    if cfg.n_grid.len() < 3 {
        return Err(contract(format!("an exponent fit needs >= 3 population sizes, got {}", cfg.n_grid.len())));
    }
    ensure(cfg.replicas > 0, || "replicas must be > 0".into())?;
    ensure(cfg.n_grid.windows(2).all(|w| w[0] < w[1]), || "n_grid must be increasing".into())?;
    let k = cfg.stages;
    let target = (k as f64 + 1.0) / (k as f64 + 2.0);
    let mut report = StudyReport::new(StudyKind::Outbreak, cfg, cfg.seed);

    let mut per_replica = Table::new(["n", "replica", "initial_infected", "a_Kplus1_inf", "A_Kplus1_inf"]);
    let mut per_n = Table::new(["n", "initial_infected", "mean_a_Kplus1_inf", "se", "mean_A_Kplus1_inf", "se_rescaled"]);
    let mut samples = Vec::new();
    let mut rescaled_means = Vec::new();
    let mut violations = 0u64;
    for (i, &n) in cfg.n_grid.iter().enumerate() {
        let c = scaling_constants(Regime::Intermediate, n, k, None)?;
        let (delta, epsilon) = perturbations_for_gamma(&cfg.gamma, &c)?;
        let params = ModelParams::new(n, k, delta, epsilon)?;
        let a1 = ceil_root(n, k as u32 + 2).min(n);
        let mut infected = vec![0; k];
        infected[0] = a1;
        let init = PopulationState::from_infected(n, &infected)?;
        let terminal = par_replicas(cfg.workers, cfg.replicas, |r| {
            let seed = replica_seed(cfg.seed, "outbreak", i as u64, r);
            let tr = simulate_recorded(&params, &init, StopRule::Absorption, seed, Recording::FinalOnly)?;
            Ok(tr.final_state.removed())
        })?;
        violations += terminal.iter().filter(|&&x| x < a1).count() as u64;
        let values: Vec<f64> = terminal.iter().map(|&x| x as f64).collect();
        let rescaled: Vec<f64> = values.iter().map(|x| x / c.alpha[k + 1]).collect();
        for (r, (&a, &s)) in terminal.iter().zip(&rescaled).enumerate() {
            per_replica.push(vec![n.to_string(), r.to_string(), a1.to_string(), a.to_string(), fmt(s)]);
        }
        let e = estimate(&values);
        let es = estimate(&rescaled);
        per_n.push(vec![n.to_string(), a1.to_string(), fmt(e.mean), fmt(e.se), fmt(es.mean), fmt(es.se)]);
        rescaled_means.push(es);
        samples.push(values);
    }

    let sizes: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    let mut rng = replica_seed(cfg.seed, "outbreak-bootstrap", 0, 0).rng();
    let fit = loglog_fit(&sizes, &samples, cfg.bootstrap, 0.05, &mut rng)?;
    report.put("slope", Statistic::fit(&fit, 0.95));
    report.put("target_exponent", Statistic::exact(target));
    report.put("ci_covers_target", Statistic::derived(fit.covers(target), cfg.replicas, &["slope"]));
    report.put("mean_rescaled_outbreak", Statistic::estimates(&rescaled_means));
    report.put("terminal_below_initial", Statistic::derived(violations, cfg.replicas * cfg.n_grid.len(), &[]));
    if violations > 0 {
        report.flags.push(format!("{violations} replicas ended with fewer removed than initially infected"));
    }
    report.replica_count = cfg.replicas;
    report.tables.insert("outbreak_per_n".into(), per_n);
    report.tables.insert("outbreak_terminals".into(), per_replica);
    Ok(report)
}
