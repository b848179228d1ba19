//! Population state and transition rates of the multistage epidemic.
//!
//! Stage 0 holds susceptibles, stages `1..=K` the infected by stage, and
//! stage `K+1` the removed. From state `a`:
//!
//! * progression `a - e_k + e_{k+1}` fires at rate `(1 + delta_k) a_k`,
//! * infection `a - e_0 + e_k` fires at rate `(1 + epsilon_k) a_k a_0 / n`,
//!
//! for `1 <= k <= K`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure, Error, Result};

/// Population size, stage count and rate perturbations of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u64,
    #[serde(rename = "K")]
    pub stages: usize,
    pub delta: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl ModelParams {
    pub fn new(n: u64, stages: usize, delta: Vec<f64>, epsilon: Vec<f64>) -> Result<Self> {
        let params = Self {
            n,
            stages,
            delta,
            epsilon,
        };
        params.validate()?;
        Ok(params)
    }

    /// The strictly critical model, all perturbations zero.
    pub fn critical(n: u64, stages: usize) -> Result<Self> {
        Self::new(n, stages, vec![0.0; stages], vec![0.0; stages])
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.n >= 1, || "population size n must be >= 1".into())?;
        ensure(self.stages >= 1, || "stage count K must be >= 1".into())?;
        for (what, v) in [("delta", &self.delta), ("epsilon", &self.epsilon)] {
            if v.len() != self.stages {
                return Err(Error::Dimension {
                    what,
                    expected: self.stages,
                    got: v.len(),
                });
            }
            if let Some((k, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > -1.0)) {
                return Err(contract(format!(
                    "{what}[{}] = {x} must be finite and > -1",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Number of coordinates of a state, `K + 2`.
    pub fn dim(&self) -> usize {
        self.stages + 2
    }

    /// Progression multiplier `1 + delta_k` for `k` in `0..=K+1`, with the
    /// boundary conventions `delta_0 = delta_{K+1} = -1`.
    pub fn progression_factor(&self, k: usize) -> f64 {
        if k == 0 || k > self.stages {
            0.0
        } else {
            1.0 + self.delta[k - 1]
        }
    }

    /// Infection multiplier `1 + epsilon_k` for `k` in `1..=K+1`, with
    /// `epsilon_{K+1} = -1`.
    pub fn infection_factor(&self, k: usize) -> f64 {
        if k == 0 || k > self.stages {
            0.0
        } else {
            1.0 + self.epsilon[k - 1]
        }
    }

    /// Largest per-individual rate multiplier, used for rate bounds.
    pub fn max_factor(&self) -> f64 {
        self.delta
            .iter()
            .chain(&self.epsilon)
            .fold(1.0_f64, |m, &x| m.max(1.0 + x))
    }
}

/// Counts per stage, `a_0` (susceptible) through `a_{K+1}` (removed).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PopulationState {
    pub counts: Vec<u64>,
}

impl PopulationState {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    /// `a_0 = n - sum(rest)`, with `infected[k-1]` in stage `k` and nobody removed.
    pub fn from_infected(n: u64, infected: &[u64]) -> Result<Self> {
        let total: u64 = infected.iter().sum();
        ensure(total <= n, || {
            format!("initial infected count {total} exceeds population {n}")
        })?;
        let mut counts = Vec::with_capacity(infected.len() + 2);
        counts.push(n - total);
        counts.extend_from_slice(infected);
        counts.push(0);
        Ok(Self { counts })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn susceptible(&self) -> u64 {
        self.counts[0]
    }

    pub fn removed(&self) -> u64 {
        self.counts[self.counts.len() - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn infected(&self) -> u64 {
        self.counts[1..self.counts.len() - 1].iter().sum()
    }

    /// No infected individual left; every rate vanishes.
    pub fn is_absorbing(&self) -> bool {
        self.infected() == 0
    }

    pub fn check_against(&self, params: &ModelParams) -> Result<()> {
        if self.dim() != params.dim() {
            return Err(Error::Dimension {
                what: "state length K+2",
                expected: params.dim(),
                got: self.dim(),
            });
        }
        let total = self.total();
        ensure(total == params.n, || {
            format!("state sums to {total}, population is {}", params.n)
        })
    }
}

/// The `2K` transition rates out of a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector {
    /// `progression[k-1]` is the rate of `k -> k+1`.
    pub progression: Vec<f64>,
    /// `infection[k-1]` is the rate of `0 -> k`.
    pub infection: Vec<f64>,
}

impl RateVector {
    pub fn total_progression(&self) -> f64 {
        self.progression.iter().sum()
    }

    pub fn total_infection(&self) -> f64 {
        self.infection.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.total_progression() + self.total_infection()
    }
}

pub fn transition_rates(state: &PopulationState, params: &ModelParams) -> Result<RateVector> {
    state.check_against(params)?;
    let a0 = state.susceptible() as f64;
    let n = params.n as f64;
    let (progression, infection) = (1..=params.stages)
        .map(|k| {
            let ak = state.counts[k] as f64;
            (
                params.progression_factor(k) * ak,
                params.infection_factor(k) * ak * a0 / n,
            )
        })
        .unzip();
    Ok(RateVector {
        progression,
        infection,
    })
}
