//! Monte Carlo studies.
//!
//! Replicas fan out over a bounded worker pool; results are collected in
//! replica order and folded sequentially, so a report depends only on its
//! configuration and master seed, never on the number of workers.

mod collapse;
mod conjecture;
mod convergence;
mod outbreak;
mod partition;

pub use collapse::{collapse_check, CollapseConfig};
pub use conjecture::{conjecture_exponents, lambda, ConjectureConfig};
pub use convergence::{convergence_study, ConvergenceConfig};
pub use outbreak::{ceil_root, outbreak_scaling_fit, OutbreakConfig};
pub use partition::{random_partition, random_partition_blocks, Partition};

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{contract, Result};
use crate::io::{write_json, Table};
use crate::rng::{derive_master, label_tag, RngSeed};
use crate::stats::{Estimate, KsResult, PowerFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Convergence,
    Outbreak,
    Collapse,
    Conjecture,
}

/// How the uncertainty of a statistic is expressed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Uncertainty {
    StandardError { se: Value },
    /// Percentile bootstrap interval.
    Interval { low: Value, high: Value, level: f64 },
    /// p-value of the accompanying test.
    PValue { p: Value },
    /// Derived deterministically from other statistics of the report.
    Derived { from: Vec<String> },
    /// A closed-form number, no sampling error.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Statistic {
    pub value: Value,
    pub replicas: Value,
    pub uncertainty: Uncertainty,
}

impl Statistic {
    pub fn estimate(e: &Estimate) -> Self {
        Self {
            value: e.mean.into(),
            replicas: e.count.into(),
            uncertainty: Uncertainty::StandardError { se: e.se.into() },
        }
    }

    pub fn estimates(es: &[Estimate]) -> Self {
        Self {
            value: es.iter().map(|e| e.mean).collect::<Vec<_>>().into(),
            replicas: es.iter().map(|e| e.count).collect::<Vec<_>>().into(),
            uncertainty: Uncertainty::StandardError { se: es.iter().map(|e| e.se).collect::<Vec<_>>().into() },
        }
    }

    pub fn ks(results: &[KsResult]) -> Self {
        Self {
            value: results.iter().map(|k| k.statistic).collect::<Vec<_>>().into(),
            replicas: results.iter().map(|k| k.n1.min(k.n2)).collect::<Vec<_>>().into(),
            uncertainty: Uncertainty::PValue { p: results.iter().map(|k| k.p_value).collect::<Vec<_>>().into() },
        }
    }

    pub fn fit(f: &PowerFit, level: f64) -> Self {
        Self {
            value: f.slope.into(),
            replicas: f.replicas_per_point.clone().into(),
            uncertainty: Uncertainty::Interval { low: f.ci_low.into(), high: f.ci_high.into(), level },
        }
    }

    pub fn derived(value: impl Into<Value>, replicas: impl Into<Value>, from: &[&str]) -> Self {
        Self {
            value: value.into(),
            replicas: replicas.into(),
            uncertainty: Uncertainty::Derived { from: from.iter().map(|s| s.to_string()).collect() },
        }
    }

    pub fn exact(value: impl Into<Value>) -> Self {
        Self { value: value.into(), replicas: 0.into(), uncertainty: Uncertainty::Exact }
    }

    pub fn as_f64(&self) -> Option<f64> {
        self.value.as_f64()
    }

    pub fn as_bool(&self) -> Option<bool> {
        self.value.as_bool()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRecord {
    pub master: u64,
    /// How replica seeds follow from the master.
    pub derivation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub study_kind: StudyKind,
    pub parameters: Value,
    pub statistics: BTreeMap<String, Statistic>,
    pub replica_count: usize,
    pub seeds: SeedRecord,
    /// Warnings that qualify the statistics.
    pub flags: Vec<String>,
    /// Companion tables, written as `<name>.csv`.
    #[serde(skip)]
    pub tables: BTreeMap<String, Table>,
}

impl StudyReport {
    fn new(kind: StudyKind, parameters: &impl Serialize, master: u64) -> Self {
        Self {
            study_kind: kind,
            parameters: serde_json::to_value(parameters).expect("configs serialize"),
            statistics: BTreeMap::new(),
            replica_count: 0,
            seeds: SeedRecord { master, derivation: SEED_DERIVATION.into() },
            flags: Vec::new(),
            tables: BTreeMap::new(),
        }
    }

    pub fn stat(&self, name: &str) -> Option<&Statistic> {
        self.statistics.get(name)
    }

    fn put(&mut self, name: impl Into<String>, s: Statistic) {
        self.statistics.insert(name.into(), s);
    }

    /// Writes `report.json` and one CSV per companion table; returns the file names.
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec!["report.json".to_string()];
        write_json(self, &dir.join("report.json"))?;
        for (name, t) in &self.tables {
            let f = format!("{name}.csv");
            t.save(&dir.join(&f))?;
            files.push(f);
        }
        Ok(files)
    }
}

pub const SEED_DERIVATION: &str =
    "replica r at grid point i of study s: stream r under master derive_master(master, [label_tag(s), i])";

/// Seed of replica `r` of the `index`-th grid point of a study.
pub fn replica_seed(master: u64, study: &str, index: u64, replica: u64) -> RngSeed {
    RngSeed::new(derive_master(master, &[label_tag(study), index]), replica)
}

/// Runs `f(0..count)` on `workers` threads (0 = all cores), preserving order.
pub fn par_replicas<T, F>(workers: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| contract(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..count as u64).into_par_iter().map(&f).collect())
}

fn fmt(x: f64) -> String {
    format!("{x}")
}
