//! Time and space scales of the three regimes, and rescaled trajectories.
//!
//! With time scale `tau` and space scales `alpha_0..alpha_{K+1}` the rescaled
//! process is
//!
//! ```text
//! A_0(t) = (n - a_0(tau t)) / alpha_0,    A_k(t) = a_k(tau t) / alpha_k,  k >= 1.
//! ```
//!
//! All regimes share `alpha_0 = alpha_{K+1}` and `alpha_{k+1} = tau alpha_k`.

use serde::{Deserialize, Serialize};

use crate::ctmc::Trajectory;
use crate::error::{contract, ensure, Error, Result};
use crate::path::SamplePath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Small,
    Intermediate,
    Large,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Regime::Small),
            "intermediate" => Ok(Regime::Intermediate),
            "large" => Ok(Regime::Large),
            other => Err(contract(format!(
                "unknown regime `{other}` (expected small, intermediate or large)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConstants {
    pub regime: Regime,
    pub n: u64,
    #[serde(rename = "K")]
    pub stages: usize,
    pub tau: f64,
    /// `alpha[k]` for `k = 0..=K+1`.
    pub alpha: Vec<f64>,
    /// `alpha_1` lies within a factor 4 of a regime boundary at this `n`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub near_boundary: bool,
}

/// Stage-1 scale separating the small and large regimes, `n^{1/(K+2)}`.
pub fn critical_scale(n: u64, stages: usize) -> f64 {
    (n as f64).powf(1.0 / (stages as f64 + 2.0))
}

pub fn scaling_constants(
    regime: Regime,
    n: u64,
    stages: usize,
    alpha1: Option<f64>,
) -> Result<ScalingConstants> {
    ensure(n >= 2, || format!("population size must be >= 2 to scale, got {n}"))?;
    ensure(stages >= 1, || "K must be >= 1".into())?;
    let nf = n as f64;
    let boundary = critical_scale(n, stages);
    let k1 = stages + 1;

    let (tau, alpha1, near_boundary) = match regime {
        Regime::Intermediate => (boundary, boundary, false),
        Regime::Small | Regime::Large => {
            let a1 = alpha1.ok_or_else(|| contract(format!("{regime:?} regime needs alpha1")))?;
            ensure(a1 > 1.0 && a1 < nf, || {
                format!("alpha1 = {a1} must lie in (1, n) = (1, {n})")
            })?;
            if regime == Regime::Small {
                ensure(a1 < boundary, || {
                    format!("small regime needs alpha1 < n^(1/(K+2)) = {boundary}, got {a1}")
                })?;
                (a1, a1, 4.0 * a1 > boundary || a1 < 4.0)
            } else {
                ensure(a1 > boundary, || {
                    format!("large regime needs alpha1 > n^(1/(K+2)) = {boundary}, got {a1}")
                })?;
                let tau = (nf / a1).powf(1.0 / k1 as f64);
                (tau, a1, a1 < 4.0 * boundary || 4.0 * a1 > nf)
            }
        }
    };
    if near_boundary {
        log::warn!(
            "alpha1 = {alpha1} is within a factor 4 of a regime boundary at n = {n}, K = {stages}"
        );
    }

    let mut alpha = vec![0.0; stages + 2];
    alpha[1] = alpha1;
    for k in 2..=k1 {
        alpha[k] = alpha[k - 1] * tau;
    }
    alpha[0] = alpha[k1];
    Ok(ScalingConstants {
        regime,
        n,
        stages,
        tau,
        alpha,
        near_boundary,
    })
}

impl ScalingConstants {
    /// Constants from raw values, for probing boundary cases; only the
    /// algebraic relations are checked.
    pub fn from_raw(regime: Regime, n: u64, stages: usize, tau: f64, alpha: Vec<f64>) -> Result<Self> {
        let c = Self {
            regime,
            n,
            stages,
            tau,
            alpha,
            near_boundary: false,
        };
        ensure(c.alpha.len() == stages + 2, || "alpha must have K+2 entries".into())?;
        ensure(c.relations_hold(1e-12), || "alpha violates the algebraic relations".into())?;
        Ok(c)
    }

    /// `alpha_0 = alpha_{K+1}` and `alpha_{k+1} = tau alpha_k`, within relative `tol`.
    pub fn relations_hold(&self, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs());
        let k1 = self.stages + 1;
        close(self.alpha[0], self.alpha[k1])
            && (1..k1).all(|k| close(self.alpha[k + 1], self.tau * self.alpha[k]))
    }

    pub fn dim(&self) -> usize {
        self.stages + 2
    }

    /// Rescaled coordinates of a single count vector.
    pub fn rescale_counts(&self, counts: &[u64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(counts.len());
        out.push((self.n - counts[0]) as f64 / self.alpha[0]);
        out.extend(counts[1..].iter().zip(&self.alpha[1..]).map(|(&a, &s)| a as f64 / s));
        out
    }

    /// Inverse of [`rescale_counts`](Self::rescale_counts), rounding to the nearest count.
    pub fn unrescale(&self, values: &[f64]) -> Vec<u64> {
        let mut out = Vec::with_capacity(values.len());
        out.push(self.n - (values[0] * self.alpha[0]).round() as u64);
        out.extend(values[1..].iter().zip(&self.alpha[1..]).map(|(&v, &s)| (v * s).round() as u64));
        out
    }

    /// Initial count in stage 1 whose rescaled value is closest to `a1`.
    pub fn stage1_count_for(&self, a1: f64) -> u64 {
        (a1 * self.alpha[1]).round().max(0.0) as u64
    }
}

/// A trajectory read in rescaled coordinates; values are computed on demand.
#[derive(Debug, Clone, Copy)]
pub struct RescaledPath<'a> {
    pub path: &'a Trajectory,
    pub constants: &'a ScalingConstants,
}

pub fn rescale<'a>(path: &'a Trajectory, constants: &'a ScalingConstants) -> Result<RescaledPath<'a>> {
    if path.params.n != constants.n || path.params.stages != constants.stages {
        return Err(contract(format!(
            "path (n = {}, K = {}) and constants (n = {}, K = {}) disagree",
            path.params.n, path.params.stages, constants.n, constants.stages
        )));
    }
    Ok(RescaledPath { path, constants })
}

impl RescaledPath<'_> {
    /// `A_n(t)`, or `None` outside the known window.
    pub fn at(&self, t: f64) -> Option<Vec<f64>> {
        self.path
            .state_at(t * self.constants.tau)
            .map(|s| self.constants.rescale_counts(s))
    }

    /// Rescaled window end.
    pub fn end_time(&self) -> f64 {
        self.path.end_time / self.constants.tau
    }
}

impl SamplePath for RescaledPath<'_> {
    fn dim(&self) -> usize {
        self.path.dim()
    }
    fn len(&self) -> usize {
        self.path.len()
    }
    fn time(&self, i: usize) -> f64 {
        self.path.time(i) / self.constants.tau
    }
    fn value(&self, i: usize, coord: usize) -> f64 {
        let a = self.path.state(i)[coord];
        if coord == 0 {
            (self.constants.n - a) as f64 / self.constants.alpha[0]
        } else {
            a as f64 / self.constants.alpha[coord]
        }
    }
}

/// Perturbations realizing drift parameters `gamma` exactly at this `n`:
/// `delta = 0`, `epsilon_k = gamma_k / tau`.
pub fn perturbations_for_gamma(
    gamma: &[f64],
    constants: &ScalingConstants,
) -> Result<(Vec<f64>, Vec<f64>)> {
    perturbations_for_tau(gamma, constants.tau, constants.stages)
}

/// As [`perturbations_for_gamma`] with an explicit time scale.
pub fn perturbations_for_tau(gamma: &[f64], tau: f64, stages: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if gamma.len() != stages {
        return Err(Error::Dimension {
            what: "gamma",
            expected: stages,
            got: gamma.len(),
        });
    }
    ensure(tau > 0.0 && tau.is_finite(), || format!("time scale must be positive, got {tau}"))?;
    let epsilon: Vec<f64> = gamma.iter().map(|g| g / tau).collect();
    if let Some((k, e)) = epsilon.iter().enumerate().find(|(_, e)| e.abs() >= 1.0 || !e.is_finite()) {
        return Err(contract(format!(
            "|gamma_{}| / tau = {} >= 1: rate perturbation inadmissible",
            k + 1,
            e.abs()
        )));
    }
    Ok((vec![0.0; stages], epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{simulate_path, StopRule};
    use crate::model::{ModelParams, PopulationState};
    use crate::rng::RngSeed;
    use approx::assert_relative_eq;

    #[test]
    fn intermediate_sir_million() {
        let c = scaling_constants(Regime::Intermediate, 1_000_000, 1, None).unwrap();
        assert_relative_eq!(c.tau, 100.0, max_relative = 1e-12);
        assert_relative_eq!(c.alpha[1], 100.0, max_relative = 1e-12);
        assert_relative_eq!(c.alpha[2], 1e4, max_relative = 1e-12);
        assert_relative_eq!(c.alpha[0], 1e4, max_relative = 1e-12);
    }

    #[test]
    fn intermediate_ignores_alpha1() {
        let a = scaling_constants(Regime::Intermediate, 10_000, 2, Some(3.0)).unwrap();
        let b = scaling_constants(Regime::Intermediate, 10_000, 2, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn large_regime_constants() {
        let c = scaling_constants(Regime::Large, 10_000, 1, Some(1000.0)).unwrap();
        let tau = 10f64.sqrt();
        assert_relative_eq!(c.tau, tau, max_relative = 1e-12);
        assert_relative_eq!(c.alpha[0], 1e4 / tau, max_relative = 1e-12);
        assert_relative_eq!(c.alpha[2], tau * 1e3, max_relative = 1e-12);
        assert!(c.relations_hold(1e-12));
    }

    #[test]
    fn two_stage_outbreak_scale() {
        let n = 1u64 << 20;
        let c = scaling_constants(Regime::Intermediate, n, 2, None).unwrap();
        let nf = n as f64;
        assert_relative_eq!(c.alpha[1], nf.powf(0.25), max_relative = 1e-12);
        assert_relative_eq!(c.alpha[2], nf.powf(0.5), max_relative = 1e-12);
        assert_relative_eq!(c.alpha[3], nf.powf(0.75), max_relative = 1e-12);
    }

    #[test]
    fn regime_range_checks() {
        assert!(scaling_constants(Regime::Large, 1000, 1, Some(0.5)).is_err());
        assert!(scaling_constants(Regime::Large, 1000, 1, Some(1000.0)).is_err());
        assert!(scaling_constants(Regime::Small, 1000, 1, Some(50.0)).is_err());
        assert!(scaling_constants(Regime::Large, 1000, 1, Some(5.0)).is_err());
        assert!(scaling_constants(Regime::Small, 1000, 1, None).is_err());
        let near = scaling_constants(Regime::Small, 1_000_000, 1, Some(60.0)).unwrap();
        assert!(near.near_boundary);
        let far = scaling_constants(Regime::Small, 1_000_000_000_000, 1, Some(100.0)).unwrap();
        assert!(!far.near_boundary);
    }

    #[test]
    fn rescale_initial_and_conservation() {
        let n = 20_000;
        let c = scaling_constants(Regime::Intermediate, n, 2, None).unwrap();
        let p = ModelParams::critical(n, 2).unwrap();
        let tr = simulate_path(
            &p,
            &PopulationState::from_infected(n, &[12, 0]).unwrap(),
            StopRule::Absorption,
            RngSeed::new(3, 0),
        )
        .unwrap();
        let r = rescale(&tr, &c).unwrap();
        for i in (0..tr.len()).step_by(7) {
            let lhs = c.alpha[0] * r.value(i, 0);
            let rhs: f64 = (1..=3).map(|k| c.alpha[k] * r.value(i, k)).sum();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
            let row: Vec<f64> = (0..4).map(|k| r.value(i, k)).collect();
            assert_eq!(c.unrescale(&row), tr.state(i));
        }
        let zero = PopulationState::from_infected(n, &[0, 0]).unwrap();
        assert!(c.rescale_counts(&zero.counts).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rescale_dimension_check() {
        let c = scaling_constants(Regime::Intermediate, 1000, 2, None).unwrap();
        let p = ModelParams::critical(1000, 1).unwrap();
        let tr = simulate_path(
            &p,
            &PopulationState::from_infected(1000, &[3]).unwrap(),
            StopRule::Absorption,
            RngSeed::new(0, 0),
        )
        .unwrap();
        assert!(rescale(&tr, &c).is_err());
    }

    #[test]
    fn stage1_scale_tends_to_one() {
        // ceil(x)/x - 1 < 1/x
        for n in [1_000u64, 100_000, 10_000_000, 1_000_000_000] {
            let c = scaling_constants(Regime::Intermediate, n, 1, None).unwrap();
            let a1 = (n as f64).cbrt().ceil();
            assert!((a1 / c.alpha[1] - 1.0).abs() < 1.0 / c.alpha[1]);
        }
    }

    #[test]
    fn gamma_perturbations() {
        let c = scaling_constants(Regime::Intermediate, 1_000_000, 1, None).unwrap();
        let (d, e) = perturbations_for_gamma(&[0.0], &c).unwrap();
        assert_eq!((d, e), (vec![0.0], vec![0.0]));
        let (_, e) = perturbations_for_tau(&[2.0], 100.0, 1).unwrap();
        assert_relative_eq!(e[0], 0.02);
        assert!(perturbations_for_tau(&[-200.0], 100.0, 1).is_err());
        assert!(perturbations_for_tau(&[2.0], 1.0, 1).is_err());
        assert!(perturbations_for_tau(&[0.1, 0.2], 100.0, 1).is_err());
    }
}
