//! The forced deterministic system followed by stages `2..=K` once stage 1 is
//! given as an external input `y`.
//!
//! State layout is `x = (x_0, x_2, ..., x_{K+1})`, so index `j >= 1` holds
//! stage `j + 1`. With the convention `x_1 = y`:
//!
//! ```text
//! x_0'     = x_{K+1}' = x_K
//! x_k'     = x_{k-1} + (gamma_k - x_0) x_k,     2 <= k <= K
//! ```
//!
//! When `y = 0` each stage has the explicit form
//! `x_k(t) = (sum_i x_{k-i}(0) phi_{k,i}(t)) exp(-int_0^t (x_0 - gamma_k))`
//! with `phi_{k,0} = 1`, `phi_{k,i}(t) = int_0^t phi_{k-1,i-1}(u) e^{eta_k u} du`,
//! `eta_k = gamma_{k-1} - gamma_k`; only `x_0` has to be found self-consistently.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{contract, ensure, Error, Result};
use crate::path::SamplePath;

/// The stage-1 input `y(t)`.
#[derive(Clone, Default)]
pub enum Forcing {
    #[default]
    Zero,
    /// Piecewise-linear interpolation of samples; constant beyond the last one.
    Sampled { times: Vec<f64>, values: Vec<f64> },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => f.write_str("Zero"),
            Forcing::Sampled { times, .. } => write!(f, "Sampled({} points)", times.len()),
            Forcing::Function(_) => f.write_str("Function"),
        }
    }
}

impl Forcing {
    pub fn sampled(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        ensure(!times.is_empty() && times.len() == values.len(), || {
            "forcing needs equally many (>= 1) times and values".into()
        })?;
        ensure(times.windows(2).all(|w| w[0] < w[1]), || "forcing times must increase".into())?;
        ensure(values.iter().all(|&v| v >= 0.0 && v.is_finite()), || {
            "forcing must be finite and nonnegative".into()
        })?;
        Ok(Forcing::Sampled { times, values })
    }

    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Forcing::Function(Arc::new(f))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Function(f) => f(t).max(0.0),
            Forcing::Sampled { times, values } => {
                let j = times.partition_point(|&s| s <= t);
                if j == 0 {
                    values[0]
                } else if j == times.len() {
                    values[j - 1]
                } else {
                    let (t0, t1) = (times[j - 1], times[j]);
                    let w = (t - t0) / (t1 - t0);
                    values[j - 1] + w * (values[j] - values[j - 1])
                }
            }
        }
    }
}

fn check_gamma(x: &[f64], gamma: &[f64]) -> Result<()> {
    ensure(!gamma.is_empty(), || "gamma must have K >= 1 entries".into())?;
    if x.len() != gamma.len() + 1 {
        return Err(Error::Dimension {
            what: "ODE state (x_0, x_2, ..., x_{K+1})",
            expected: gamma.len() + 1,
            got: x.len(),
        });
    }
    Ok(())
}

fn rhs_into(y: f64, x: &[f64], gamma: &[f64], out: &mut [f64]) {
    let k = gamma.len();
    let stage = |s: usize| if s == 1 { y } else { x[s - 1] };
    let last = stage(k);
    out[0] = last;
    for s in 2..=k {
        out[s - 1] = stage(s - 1) + (gamma[s - 1] - x[0]) * x[s - 1];
    }
    out[k] = last;
}

/// Right-hand side `F(y, x)`.
pub fn ode_rhs(y: f64, x: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    check_gamma(x, gamma)?;
    let mut out = vec![0.0; x.len()];
    rhs_into(y, x, gamma, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeConfig {
    pub dt: f64,
    pub horizon: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    /// `K + 1` values per grid point.
    values: Vec<f64>,
    pub gamma: Vec<f64>,
    pub forcing: Forcing,
}

impl OdeSolution {
    /// Wraps raw grid values, e.g. to exercise the diagnostics.
    pub fn from_parts(times: Vec<f64>, values: Vec<f64>, gamma: Vec<f64>, forcing: Forcing) -> Result<Self> {
        let d = gamma.len() + 1;
        ensure(values.len() == times.len() * d, || "values do not match times x (K+1)".into())?;
        Ok(Self { times, values, gamma, forcing })
    }

    pub fn stages(&self) -> usize {
        self.gamma.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.stages() + 1;
        &self.values[i * d..(i + 1) * d]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.times.len() - 1)
    }

    /// Values at time `t` by linear interpolation between grid points.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 {
            return self.row(0).to_vec();
        }
        if j == self.times.len() {
            return self.last().to_vec();
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = (t - t0) / (t1 - t0);
        self.row(j - 1)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// `sup |self - other| / sup |other|` over all shared grid points and coordinates.
    pub fn relative_sup_error(&self, reference: &OdeSolution) -> f64 {
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for (i, &t) in self.times.iter().enumerate() {
            let r = reference.interpolate(t);
            for (a, b) in self.row(i).iter().zip(&r) {
                diff = diff.max((a - b).abs());
                scale = scale.max(b.abs());
            }
        }
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

impl SamplePath for OdeSolution {
    fn dim(&self) -> usize {
        self.stages() + 1
    }
    fn len(&self) -> usize {
        self.times.len()
    }
    fn time(&self, i: usize) -> f64 {
        self.times[i]
    }
    fn value(&self, i: usize, coord: usize) -> f64 {
        self.row(i)[coord]
    }
}

/// Uniform grid on `[0, horizon]` whose step is at most `dt` and ends exactly at `horizon`.
pub fn uniform_grid(dt: f64, horizon: f64) -> Result<Vec<f64>> {
    ensure(horizon > 0.0 && horizon.is_finite(), || format!("horizon must be > 0, got {horizon}"))?;
    ensure(dt > 0.0 && dt.is_finite(), || format!("dt must be > 0, got {dt}"))?;
    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    Ok((0..=steps).map(|i| if i == steps { horizon } else { i as f64 * h }).collect())
}

/// Classical RK4 on a uniform grid; `y` is evaluated at the stage times and
/// negative excursions are clamped to 0 after each step.
pub fn integrate_ode(init: &[f64], forcing: &Forcing, gamma: &[f64], config: OdeConfig) -> Result<OdeSolution> {
    check_gamma(init, gamma)?;
    ensure(init.iter().all(|&v| v >= 0.0 && v.is_finite()), || "initial state must be >= 0".into())?;
    let times = uniform_grid(config.dt, config.horizon)?;
    let d = init.len();
    let mut values = Vec::with_capacity(times.len() * d);
    values.extend_from_slice(init);
    let mut x = init.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let y_mid = forcing.eval(t + 0.5 * h);
        rhs_into(forcing.eval(t), &x, gamma, &mut k1);
        for j in 0..d {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        rhs_into(y_mid, &tmp, gamma, &mut k2);
        for j in 0..d {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        rhs_into(y_mid, &tmp, gamma, &mut k3);
        for j in 0..d {
            tmp[j] = x[j] + h * k3[j];
        }
        rhs_into(forcing.eval(t + h), &tmp, gamma, &mut k4);
        for j in 0..d {
            x[j] = (x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).max(0.0);
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericalEscape(format!("ODE state became {bad} at t = {t}")));
        }
        values.extend_from_slice(&x);
    }
    Ok(OdeSolution { times, values, gamma: gamma.to_vec(), forcing: forcing.clone() })
}

/// Settings of the self-consistency loop in [`closed_form_y0`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    pub tol: f64,
    pub max_iter: usize,
    /// Length of the time windows on which the loop is run in turn.
    pub window: f64,
}

impl Default for FixedPoint {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, window: 0.5 }
    }
}

/// Cumulative integral on a uniform grid by the trapezoid rule with the
/// Euler-Maclaurin endpoint correction, given the integrand and its derivative.
fn corrected_cumulative(h: f64, f: &[f64], df: &[f64], out: &mut [f64]) {
    out[0] = 0.0;
    for j in 1..f.len() {
        out[j] = out[j - 1] + 0.5 * h * (f[j - 1] + f[j]) - h * h / 12.0 * (df[j] - df[j - 1]);
    }
}

/// `phi[k][i]` on the grid (and derivatives), for `k = 2..=K`, `i = 0..=k-2`.
fn phi_tables(times: &[f64], h: f64, gamma: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let k_max = gamma.len();
    let len = times.len();
    let eta = |k: usize| gamma[k - 2] - gamma[k - 1];
    // phi[k] indexed by i; index 0,1 of outer unused
    let mut phi: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k_max + 1];
    for k in 2..=k_max {
        let mut row = vec![vec![1.0; len]];
        for i in 1..=k - 2 {
            let ek = eta(k);
            let prev = &phi[k - 1][i - 1];
            let g: Vec<f64> = (0..len).map(|j| prev[j] * (ek * times[j]).exp()).collect();
            let dprev: Vec<f64> = if i == 1 {
                vec![0.0; len]
            } else {
                let e1 = eta(k - 1);
                let pp = &phi[k - 2][i - 2];
                (0..len).map(|j| pp[j] * (e1 * times[j]).exp()).collect()
            };
            let dg: Vec<f64> = (0..len)
                .map(|j| dprev[j] * (ek * times[j]).exp() + ek * g[j])
                .collect();
            let mut out = vec![0.0; len];
            corrected_cumulative(h, &g, &dg, &mut out);
            row.push(out);
        }
        phi[k] = row;
    }
    phi
}

/// Unforced solution from the explicit stage formula, iterating on `x_0`.
///
/// The grid must be uniform and start at 0. The loop runs window by window so
/// that each Picard map is a contraction.
pub fn closed_form_y0(init: &[f64], gamma: &[f64], grid: &[f64], fp: FixedPoint) -> Result<OdeSolution> {
    check_gamma(init, gamma)?;
    ensure(init.iter().all(|&v| v >= 0.0 && v.is_finite()), || "initial state must be >= 0".into())?;
    ensure(grid.len() >= 2 && grid[0] == 0.0, || "grid must start at 0 with >= 2 points".into())?;
    let h = grid[1] - grid[0];
    ensure(
        grid.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h),
        || "closed form needs a uniform grid".into(),
    )?;
    let k_max = gamma.len();
    let len = grid.len();
    let d = k_max + 1;

    if k_max == 1 {
        // nothing evolves without input
        let values = init.iter().copied().cycle().take(len * d).collect();
        return OdeSolution::from_parts(grid.to_vec(), values, gamma.to_vec(), Forcing::Zero);
    }

    let phi = phi_tables(grid, h, gamma);
    // prefactor_k(t) = sum_i x_{k-i}(0) phi_{k,i}(t)
    let stage0 = |s: usize| init[s - 1];
    let prefactor: Vec<Vec<f64>> = (0..=k_max)
        .map(|k| {
            if k < 2 {
                return Vec::new();
            }
            (0..len)
                .map(|j| (0..=k - 2).map(|i| stage0(k - i) * phi[k][i][j]).sum())
                .collect()
        })
        .collect();

    let mut x0 = vec![init[0]; len];
    // int_0^t x_0
    let mut x0_int = vec![0.0; len];
    // stages[k][j] for k = 2..=K
    let mut stages = vec![vec![0.0; len]; k_max + 1];
    for k in 2..=k_max {
        stages[k][0] = init[k - 1];
    }
    let steps_per_window = ((fp.window / h).round() as usize).max(1);
    let mut start = 0;
    let mut worst_iter = 0;
    while start + 1 < len {
        let end = (start + steps_per_window).min(len - 1);
        let x0_start = x0[start];
        for v in &mut x0[start + 1..=end] {
            *v = x0_start;
        }
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for iter in 1..=fp.max_iter {
            // x_0 integral, with derivative x_0' = x_K from the current iterate
            for j in start + 1..=end {
                x0_int[j] = x0_int[j - 1] + 0.5 * h * (x0[j - 1] + x0[j])
                    - h * h / 12.0 * (stages[k_max][j] - stages[k_max][j - 1]);
            }
            for j in start + 1..=end {
                let t = grid[j];
                for k in 2..=k_max {
                    let ik = x0_int[j] - gamma[k - 1] * t;
                    stages[k][j] = prefactor[k][j] * (-ik).exp();
                }
            }
            // new x_0 from x_0' = x_K, x_K' = x_{K-1} + (gamma_K - x_0) x_K
            let deriv_k = |j: usize, st: &Vec<Vec<f64>>, x0v: f64| {
                let below = if k_max == 2 { 0.0 } else { st[k_max - 1][j] };
                below + (gamma[k_max - 1] - x0v) * st[k_max][j]
            };
            residual = 0.0;
            let mut prev = x0[start];
            for j in start + 1..=end {
                let f0 = stages[k_max][j - 1];
                let f1 = stages[k_max][j];
                let df0 = deriv_k(j - 1, &stages, x0[j - 1]);
                let df1 = deriv_k(j, &stages, x0[j]);
                let new = prev + 0.5 * h * (f0 + f1) - h * h / 12.0 * (df1 - df0);
                residual = residual.max((new - x0[j]).abs() / x0[j].abs().max(1.0));
                x0[j] = new;
                prev = new;
            }
            worst_iter = worst_iter.max(iter);
            if residual < fp.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: format!("closed-form x_0 fixed point on [{}, {}]", grid[start], grid[end]),
                residual,
                partial: x0[end],
            });
        }
        // refresh integrals and stages with the converged x_0
        for j in start + 1..=end {
            x0_int[j] = x0_int[j - 1] + 0.5 * h * (x0[j - 1] + x0[j])
                - h * h / 12.0 * (stages[k_max][j] - stages[k_max][j - 1]);
            for k in 2..=k_max {
                stages[k][j] = prefactor[k][j] * (-(x0_int[j] - gamma[k - 1] * grid[j])).exp();
            }
        }
        start = end;
    }
    log::debug!("closed form converged, at most {worst_iter} iterations per window");

    let shift = init[k_max] - init[0];
    let mut values = Vec::with_capacity(len * d);
    for j in 0..len {
        values.push(x0[j]);
        values.extend(stages[2..=k_max].iter().map(|s| s[j]));
        values.push(x0[j] + shift);
    }
    OdeSolution::from_parts(grid.to_vec(), values, gamma.to_vec(), Forcing::Zero)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Largest allowed per-step decrease of `x_0`.
    pub monotone: f64,
    /// `x_k(T)` must fall below this for the decay check.
    pub decay: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { monotone: 1e-9, decay: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Distance to the failure boundary, positive when passing.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeDiagnostics {
    pub checks: Vec<Check>,
    /// Bracket for `x_0(infinity)`: terminal value and terminal value plus remaining mass.
    pub x0_limit: (f64, f64),
    /// Trapezoid integrals of `x_k` over the grid, `k = 2..=K`.
    pub stage_integrals: Vec<f64>,
}

impl OdeDiagnostics {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks the qualitative properties every solution must have.
pub fn verify_properties(sol: &OdeSolution, tol: Tolerances) -> OdeDiagnostics {
    let k_max = sol.stages();
    let len = sol.times.len();
    let mut checks = Vec::new();

    let min_step = (1..len)
        .map(|i| sol.row(i)[0] - sol.row(i - 1)[0])
        .fold(f64::INFINITY, f64::min);
    let min_step = if min_step.is_finite() { min_step } else { 0.0 };
    checks.push(Check {
        name: "x0_nondecreasing".into(),
        passed: min_step >= -tol.monotone,
        margin: min_step + tol.monotone,
    });

    let last = sol.last();
    let remaining: f64 = (1..k_max).map(|j| last[j]).sum();
    let x0_limit = (last[0], last[0] + remaining);
    let mut stage_integrals = Vec::new();

    if k_max >= 2 {
        let seeded = sol.forcing.eval(0.0) > 0.0 || sol.row(0)[1] > 0.0;
        if seeded {
            let min_pos = (1..len)
                .flat_map(|i| (1..k_max).map(move |j| (i, j)))
                .map(|(i, j)| sol.row(i)[j])
                .fold(f64::INFINITY, f64::min);
            checks.push(Check {
                name: "stages_positive".into(),
                passed: min_pos > 0.0,
                margin: min_pos,
            });
        }
        let gmax = sol.gamma[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check {
            name: "x0_limit_exceeds_gamma".into(),
            passed: x0_limit.1 > gmax,
            margin: x0_limit.1 - gmax,
        });
        let worst = (1..k_max).map(|j| last[j]).fold(0.0, f64::max);
        for j in 1..k_max {
            let integral: f64 = (1..len)
                .map(|i| 0.5 * (sol.times[i] - sol.times[i - 1]) * (sol.row(i)[j] + sol.row(i - 1)[j]))
                .sum();
            stage_integrals.push(integral);
        }
        let finite = stage_integrals.iter().all(|v| v.is_finite());
        checks.push(Check {
            name: "stages_decay".into(),
            passed: worst < tol.decay && finite,
            margin: tol.decay - worst,
        });
    }
    OdeDiagnostics { checks, x0_limit, stage_integrals }
}

/// Right-continuous inverse of `t -> int_0^t z`, with `z` linear between samples.
#[derive(Debug, Clone)]
pub struct TimeChange {
    times: Vec<f64>,
    z: Vec<f64>,
    cumulative: Vec<f64>,
}

pub fn time_change_inverse(times: &[f64], z: &[f64]) -> Result<TimeChange> {
    ensure(times.len() == z.len() && !times.is_empty(), || "time change needs matching samples".into())?;
    ensure(times.windows(2).all(|w| w[0] < w[1]), || "times must increase".into())?;
    if let Some(bad) = z.iter().find(|&&v| v.is_nan() || v < 0.0) {
        return Err(contract(format!("time change needs z >= 0, found {bad}")));
    }
    let mut cumulative = vec![0.0; times.len()];
    for j in 1..times.len() {
        cumulative[j] = cumulative[j - 1] + 0.5 * (times[j] - times[j - 1]) * (z[j - 1] + z[j]);
    }
    Ok(TimeChange { times: times.to_vec(), z: z.to_vec(), cumulative })
}

impl TimeChange {
    /// `int_0^infinity z` over the available horizon.
    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// `int_0^s z`, by the same piecewise-linear `z`.
    pub fn integral(&self, s: f64) -> f64 {
        let j = self.times.partition_point(|&t| t <= s);
        if j == 0 {
            return 0.0;
        }
        if j == self.times.len() {
            return self.total();
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let u = s - t0;
        let slope = (self.z[j] - self.z[j - 1]) / (t1 - t0);
        self.cumulative[j - 1] + self.z[j - 1] * u + 0.5 * slope * u * u
    }

    /// `c(t)`, with `f64::INFINITY` once `t` reaches the total integral.
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            // right-continuous: skip an initial flat stretch
            let j = self.cumulative.partition_point(|&c| c <= 0.0);
            return if j >= self.times.len() { f64::INFINITY } else { self.times[j - 1] };
        }
        if t >= self.total() {
            return f64::INFINITY;
        }
        let j = self.cumulative.partition_point(|&c| c <= t) - 1;
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let r = t - self.cumulative[j];
        let b = self.z[j];
        let a = 0.5 * (self.z[j + 1] - self.z[j]) / (t1 - t0);
        // a u^2 + b u = r, stable root
        let u = 2.0 * r / (b + (b * b + 4.0 * a * r).max(0.0).sqrt());
        (t0 + u).min(t1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rhs_examples() {
        assert_eq!(ode_rhs(0.0, &[0.0; 3], &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(ode_rhs(1.0, &[0.0, 2.0, 0.0], &[0.0, 0.0]).unwrap(), vec![2.0, 1.0, 2.0]);
        let r = ode_rhs(0.3, &[1.2, 0.4, 0.9, 2.0], &[0.1, -0.5, 0.7]).unwrap();
        assert_eq!(r[0], r[3]);
        assert!(ode_rhs(0.0, &[0.0; 2], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_is_an_equilibrium() {
        let s = integrate_ode(&[0.0; 4], &Forcing::Zero, &[0.3, 0.1, -0.2], OdeConfig { dt: 0.01, horizon: 2.0 }).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert!(integrate_ode(&[0.0; 2], &Forcing::Zero, &[0.0], OdeConfig { dt: 0.01, horizon: 0.0 }).is_err());
    }

    #[test]
    fn second_stage_decays_exponentially() {
        let gamma = [0.0, 0.4];
        let s = integrate_ode(&[0.5, 1.0, 0.2], &Forcing::Zero, &gamma, OdeConfig { dt: 1e-3, horizon: 5.0 }).unwrap();
        // x_2(t) = x_2(0) exp(-int (x_0 - gamma_2))
        let mut int_x0 = 0.0;
        for i in 1..s.times.len() {
            let h = s.times[i] - s.times[i - 1];
            int_x0 += 0.5 * h * (s.row(i)[0] + s.row(i - 1)[0]);
            let expect = (-(int_x0 - 0.4 * s.times[i])).exp();
            assert_relative_eq!(s.row(i)[1], expect, max_relative = 1e-6);
        }
    }

    #[test]
    fn removed_tracks_susceptible_offset() {
        let y = Forcing::function(|t| (1.0 - t).max(0.0));
        let s = integrate_ode(&[0.2, 0.3, 0.1, 0.7], &y, &[0.0, 0.5, -0.5], OdeConfig { dt: 1e-3, horizon: 4.0 }).unwrap();
        for i in 0..s.times.len() {
            let r = s.row(i);
            assert_relative_eq!(r[3] - r[0], 0.5, max_relative = 1e-10);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let y = Forcing::function(|t| 1.0 + (2.0 * t).sin());
        let run = |dt| integrate_ode(&[0.0, 0.5, 0.2, 0.0], &y, &[0.0, 0.3, -0.2], OdeConfig { dt, horizon: 2.0 }).unwrap();
        let fine = run(1e-3);
        let e1 = run(0.04).relative_sup_error(&fine);
        let e2 = run(0.02).relative_sup_error(&fine);
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "order {order}");
    }

    #[test]
    fn sampled_forcing_interpolates() {
        let f = Forcing::sampled(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(1.5), 1.5);
        assert_eq!(f.eval(5.0), 1.0);
        assert!(Forcing::sampled(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn closed_form_two_stage() {
        let grid = uniform_grid(1e-3, 10.0).unwrap();
        let cf = closed_form_y0(&[0.0, 1.0, 0.0], &[0.0, 0.0], &grid, FixedPoint::default()).unwrap();
        let num = integrate_ode(&[0.0, 1.0, 0.0], &Forcing::Zero, &[0.0, 0.0], OdeConfig { dt: 1e-4, horizon: 10.0 }).unwrap();
        assert!(cf.relative_sup_error(&num) < 1e-6);
    }

    #[test]
    fn closed_form_zero_init() {
        let grid = uniform_grid(1e-2, 3.0).unwrap();
        let cf = closed_form_y0(&[0.0; 4], &[0.5, -0.5, 0.2], &grid, FixedPoint::default()).unwrap();
        assert!(cf.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_three_stage_reference_case() {
        let grid = uniform_grid(1e-3, 10.0).unwrap();
        let init = [0.0, 1.0, 0.5, 0.0];
        let cf = closed_form_y0(&init, &[0.0; 3], &grid, FixedPoint::default()).unwrap();
        let num = integrate_ode(&init, &Forcing::Zero, &[0.0; 3], OdeConfig { dt: 1e-4, horizon: 10.0 }).unwrap();
        let err = cf.relative_sup_error(&num);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn diagnostics_on_healthy_solution() {
        let s = integrate_ode(&[0.0, 1.0, 0.0], &Forcing::Zero, &[0.0, 0.0], OdeConfig { dt: 1e-3, horizon: 40.0 }).unwrap();
        let d = verify_properties(&s, Tolerances::default());
        assert!(d.all_passed(), "{d:?}");
        assert!(d.x0_limit.0 > 0.0);
    }

    #[test]
    fn diagnostics_single_stage_only_monotonicity() {
        let s = integrate_ode(&[0.0, 0.0], &Forcing::function(|_| 1.0), &[0.0], OdeConfig { dt: 0.1, horizon: 1.0 }).unwrap();
        let d = verify_properties(&s, Tolerances::default());
        assert_eq!(d.checks.len(), 1);
        assert_eq!(d.checks[0].name, "x0_nondecreasing");
    }

    #[test]
    fn diagnostics_flag_violations() {
        // x_0 stalls at 0.1 while gamma_2 = 1
        let times = vec![0.0, 1.0, 2.0];
        let values = vec![0.0, 0.05, 0.0, 0.1, 0.0, 0.05, 0.1, 0.0, 0.1];
        let sol = OdeSolution::from_parts(times, values, vec![0.0, 1.0], Forcing::Zero).unwrap();
        let d = verify_properties(&sol, Tolerances::default());
        assert!(!d.get("x0_limit_exceeds_gamma").unwrap().passed);
        let dec = OdeSolution::from_parts(vec![0.0, 1.0], vec![1.0, 0.0, 1.0, 0.5, 0.0, 0.5], vec![0.0, 0.0], Forcing::Zero).unwrap();
        assert!(!verify_properties(&dec, Tolerances::default()).get("x0_nondecreasing").unwrap().passed);
    }

    #[test]
    fn time_change_identity_and_blowup() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let tc = time_change_inverse(&times, &vec![1.0; 101]).unwrap();
        assert_relative_eq!(tc.eval(3.7), 3.7, max_relative = 1e-12);
        assert_eq!(tc.eval(10.0), f64::INFINITY);
        assert_eq!(tc.eval(11.0), f64::INFINITY);
        assert!(time_change_inverse(&[0.0, 1.0], &[1.0, -0.1]).is_err());
    }

    #[test]
    fn time_change_linearizes_exponential_decay() {
        let (z0, r) = (2.0, 0.5);
        let times = uniform_grid(1e-3, 30.0).unwrap();
        let z: Vec<f64> = times.iter().map(|t| z0 * (-r * t).exp()).collect();
        let tc = time_change_inverse(&times, &z).unwrap();
        for t in [0.5, 1.0, 2.0, 3.0] {
            let c = tc.eval(t);
            assert_relative_eq!(z0 * (-r * c).exp(), z0 - r * t, max_relative = 1e-5);
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_rk4(
            k in 2usize..=4,
            g in prop::collection::vec(-1.0f64..1.0, 4),
            x in prop::collection::vec(0.0f64..1.5, 5),
        ) {
            let gamma = &g[..k];
            let init: Vec<f64> = x[..=k].to_vec();
            let grid = uniform_grid(2e-3, 4.0).unwrap();
            let cf = closed_form_y0(&init, gamma, &grid, FixedPoint::default()).unwrap();
            let num = integrate_ode(&init, &Forcing::Zero, gamma, OdeConfig { dt: 5e-4, horizon: 4.0 }).unwrap();
            prop_assert!(cf.relative_sup_error(&num) < 1e-6);
        }

        #[test]
        fn time_change_round_trip(z in prop::collection::vec(0.0f64..3.0, 2..40)) {
            let times: Vec<f64> = (0..z.len()).map(|i| i as f64 * 0.25).collect();
            let tc = time_change_inverse(&times, &z).unwrap();
            let total = tc.total();
            for q in [0.1, 0.35, 0.6, 0.95] {
                let t = q * total;
                if t > 0.0 {
                    let c = tc.eval(t);
                    prop_assert!((tc.integral(c) - t).abs() <= 1e-8 * t.max(1e-300) + 1e-14);
                }
            }
        }

        #[test]
        fn susceptible_is_monotone(
            g in prop::collection::vec(-1.0f64..1.0, 3),
            x in prop::collection::vec(0.0f64..2.0, 4),
            amp in 0.0f64..2.0,
        ) {
            let y = Forcing::function(move |t| amp * (-t).exp());
            let s = integrate_ode(&x, &y, &g, OdeConfig { dt: 1e-2, horizon: 5.0 }).unwrap();
            let d = verify_properties(&s, Tolerances::default());
            prop_assert!(d.get("x0_nondecreasing").unwrap().passed);
            prop_assert!(s.values.iter().all(|&v| v >= 0.0));
        }
    }
}
