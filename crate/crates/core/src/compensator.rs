//! Compensators of the rescaled chain.
//!
//! For each coordinate `k` of the rescaled path `A`, the drift `V_k` and the
//! predictable quadratic variation `<M_k>` are integrals of piecewise-constant
//! functions of the current state, so they are integrated exactly between
//! events. `M_k = A_k - A_k(0) - V_k` is a martingale; its empirical mean and
//! variance are simulation-correctness diagnostics.
//!
//! In rescaled time the integrands are
//!
//! ```text
//! V_0:  (tau/alpha_0) (a_0/n) sum_k (1+eps_k) a_k
//! V_k:  (1+delta_{k-1}) A_{k-1} + tau (eps_k - delta_k) A_k - (tau alpha_0/n)(1+eps_k) A_0 A_k
//! <M_k>: V_k / alpha_k + 2 (tau/alpha_k)(1+delta_k) A_k
//! ```
//!
//! with `1 + delta_0 = 1 + delta_{K+1} = 1 + eps_{K+1} = 0`.

use crate::ctmc::{RecordingKind, StopRule, Trajectory};
use crate::error::{contract, Result};
use crate::scaling::{rescale, ScalingConstants};
use crate::path::SamplePath;

/// Cumulative compensators sampled at the (rescaled) event times of a trajectory.
#[derive(Debug, Clone)]
pub struct CompensatorPaths {
    pub times: Vec<f64>,
    pub dim: usize,
    /// Rescaled state at each sample.
    a: Vec<f64>,
    v: Vec<f64>,
    qv: Vec<f64>,
    v_rate: Vec<f64>,
    qv_rate: Vec<f64>,
    /// Last time at which the values are known; infinite after absorption.
    pub horizon: f64,
}

/// Values of every coordinate at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorSnapshot {
    pub t: f64,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub qv: Vec<f64>,
    pub m: Vec<f64>,
}

fn integrands(
    a_counts: &[u64],
    a_resc: &[f64],
    traj: &Trajectory,
    c: &ScalingConstants,
    v_rate: &mut [f64],
    qv_rate: &mut [f64],
) {
    let p = &traj.params;
    let k1 = p.stages + 1;
    let n = p.n as f64;
    let tau = c.tau;
    let s0 = a_counts[0] as f64 / n;
    let infection_mass: f64 = (1..=p.stages)
        .map(|k| p.infection_factor(k) * a_counts[k] as f64)
        .sum();
    v_rate[0] = tau / c.alpha[0] * s0 * infection_mass;
    qv_rate[0] = v_rate[0] / c.alpha[0];
    let depletion = tau * c.alpha[0] / n * a_resc[0];
    for k in 1..=k1 {
        let prog_in = p.progression_factor(k - 1) * a_resc[k - 1];
        let prog_out = p.progression_factor(k);
        let inf = p.infection_factor(k);
        let net = tau * (inf - prog_out) * a_resc[k] - depletion * inf * a_resc[k];
        v_rate[k] = prog_in + net;
        qv_rate[k] = v_rate[k] / c.alpha[k] + 2.0 * tau / c.alpha[k] * prog_out * a_resc[k];
    }
}

/// Compensators along a fully recorded trajectory.
pub fn compensator_paths(traj: &Trajectory, constants: &ScalingConstants) -> Result<CompensatorPaths> {
    let view = rescale(traj, constants)?;
    if traj.kind != RecordingKind::Full {
        return Err(contract("compensators need a fully recorded trajectory"));
    }
    let d = traj.params.dim();
    let len = traj.len();
    let mut out = CompensatorPaths {
        times: Vec::with_capacity(len),
        dim: d,
        a: Vec::with_capacity(len * d),
        v: Vec::with_capacity(len * d),
        qv: Vec::with_capacity(len * d),
        v_rate: vec![0.0; len * d],
        qv_rate: vec![0.0; len * d],
        horizon: if traj.stop_rule == StopRule::Absorption {
            f64::INFINITY
        } else {
            view.end_time()
        },
    };
    let mut acc_v = vec![0.0; d];
    let mut acc_qv = vec![0.0; d];
    for i in 0..len {
        let t = view.time(i);
        if i > 0 {
            let dt = t - out.times[i - 1];
            for k in 0..d {
                acc_v[k] += out.v_rate[(i - 1) * d + k] * dt;
                acc_qv[k] += out.qv_rate[(i - 1) * d + k] * dt;
            }
        }
        out.times.push(t);
        let counts = traj.state(i);
        let resc = constants.rescale_counts(counts);
        let (vr, qr) = (
            &mut out.v_rate[i * d..(i + 1) * d],
            &mut out.qv_rate[i * d..(i + 1) * d],
        );
        integrands(counts, &resc, traj, constants, vr, qr);
        out.a.extend_from_slice(&resc);
        out.v.extend_from_slice(&acc_v);
        out.qv.extend_from_slice(&acc_qv);
    }
    Ok(out)
}

impl CompensatorPaths {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn v(&self, i: usize, k: usize) -> f64 {
        self.v[i * self.dim + k]
    }

    pub fn qv(&self, i: usize, k: usize) -> f64 {
        self.qv[i * self.dim + k]
    }

    /// `M_k` at sample `i`.
    pub fn martingale(&self, i: usize, k: usize) -> f64 {
        self.a[i * self.dim + k] - self.a[k] - self.v(i, k)
    }

    /// All quantities at rescaled time `t`, or `None` beyond the known window.
    pub fn at(&self, t: f64) -> Option<CompensatorSnapshot> {
        if t < 0.0 || t > self.horizon || self.is_empty() {
            return None;
        }
        let i = self.index_at(t)?;
        let d = self.dim;
        let dt = t - self.times[i];
        let a = self.a[i * d..(i + 1) * d].to_vec();
        let v: Vec<f64> = (0..d).map(|k| self.v(i, k) + self.v_rate[i * d + k] * dt).collect();
        let qv: Vec<f64> = (0..d).map(|k| self.qv(i, k) + self.qv_rate[i * d + k] * dt).collect();
        let m = (0..d).map(|k| a[k] - self.a[k] - v[k]).collect();
        Some(CompensatorSnapshot { t, a, v, qv, m })
    }
}

impl SamplePath for CompensatorPaths {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.times.len()
    }
    fn time(&self, i: usize) -> f64 {
        self.times[i]
    }
    /// The martingale part.
    fn value(&self, i: usize, coord: usize) -> f64 {
        self.martingale(i, coord)
    }
}
