//! Euler-Maruyama integration of the limiting diffusions.
//!
//! Only stage 1 is noisy: `dA_1 = b_1(A) dt + sqrt(2 A_1) dB`. The scheme uses
//! full truncation (`sqrt(2 max(A_1, 0))`), clamps every coordinate at 0 after
//! each step and makes 0 absorbing for stage 1, so grid hitting times of 0
//! match the extinction time of the limit up to `O(dt)`.
//!
//! Every step consumes exactly one standard normal, whether or not stage 1 is
//! already extinct, so two runs from the same seed share their noise.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure, Error, Result};
use crate::ode::{integrate_ode, Forcing, OdeConfig};
use crate::path::SamplePath;
use crate::rng::{RngSeed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeVariant {
    /// Drift with depletion of susceptibles.
    Intermediate,
    /// Branching drift, no depletion.
    Small,
    /// One-dimensional `dZ = gamma_1 Z dt + sqrt(2 Z) dB`.
    Feller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeSpec {
    #[serde(rename = "K")]
    pub stages: usize,
    pub gamma: Vec<f64>,
    pub variant: SdeVariant,
}

impl SdeSpec {
    pub fn new(stages: usize, gamma: Vec<f64>, variant: SdeVariant) -> Result<Self> {
        let s = Self { stages, gamma, variant };
        s.validate()?;
        Ok(s)
    }

    pub fn feller(gamma: f64) -> Self {
        Self { stages: 1, gamma: vec![gamma], variant: SdeVariant::Feller }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.stages >= 1, || "K must be >= 1".into())?;
        if self.gamma.len() != self.stages {
            return Err(Error::Dimension { what: "gamma", expected: self.stages, got: self.gamma.len() });
        }
        ensure(self.gamma.iter().all(|g| g.is_finite()), || "gamma must be finite".into())?;
        ensure(self.variant != SdeVariant::Feller || self.stages == 1, || {
            "the Feller diffusion is one-dimensional (K = 1)".into()
        })
    }

    /// Coordinates per state: 1 for Feller, `K + 2` otherwise.
    pub fn dim(&self) -> usize {
        match self.variant {
            SdeVariant::Feller => 1,
            _ => self.stages + 2,
        }
    }

    /// Index of the noisy coordinate.
    pub fn noisy(&self) -> usize {
        match self.variant {
            SdeVariant::Feller => 0,
            _ => 1,
        }
    }
}

fn drift_into(a: &[f64], spec: &SdeSpec, out: &mut [f64]) {
    let g = &spec.gamma;
    match spec.variant {
        SdeVariant::Feller => out[0] = g[0] * a[0],
        SdeVariant::Intermediate | SdeVariant::Small => {
            let k = spec.stages;
            let dep = if spec.variant == SdeVariant::Intermediate { a[0] } else { 0.0 };
            out[0] = a[k];
            out[1] = (g[0] - dep) * a[1];
            for s in 2..=k {
                out[s] = a[s - 1] + (g[s - 1] - dep) * a[s];
            }
            out[k + 1] = a[k];
        }
    }
}

pub fn drift(a: &[f64], spec: &SdeSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if a.len() != spec.dim() {
        return Err(Error::Dimension { what: "SDE state", expected: spec.dim(), got: a.len() });
    }
    let mut out = vec![0.0; a.len()];
    drift_into(a, spec, &mut out);
    Ok(out)
}

/// Step size, horizon and sampling stride of an integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Keep every `stride`-th grid point (the last point is always kept).
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl SdeConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self { dt, horizon, stride: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.dt > 0.0 && self.dt.is_finite(), || format!("dt must be > 0, got {}", self.dt))?;
        ensure(self.horizon >= self.dt, || {
            format!("horizon {} must be at least dt {}", self.horizon, self.dt)
        })
    }

    fn steps(&self) -> u64 {
        (self.horizon / self.dt - 1e-9).ceil() as u64
    }
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 10.0, stride: 1 }
    }
}

/// One Euler-Maruyama step machine, reusable across runs.
#[derive(Debug, Clone)]
pub struct Stepper {
    spec: SdeSpec,
    dt: f64,
    sqrt_dt: f64,
    state: Vec<f64>,
    drift: Vec<f64>,
    absorbed: bool,
    pub steps: u64,
}

impl Stepper {
    pub fn new(spec: &SdeSpec, init: &[f64], dt: f64) -> Result<Self> {
        spec.validate()?;
        if init.len() != spec.dim() {
            return Err(Error::Dimension { what: "SDE initial state", expected: spec.dim(), got: init.len() });
        }
        ensure(init.iter().all(|&v| v >= 0.0 && v.is_finite()), || "SDE initial state must be >= 0".into())?;
        ensure(dt > 0.0 && dt.is_finite(), || format!("dt must be > 0, got {dt}"))?;
        Ok(Self {
            spec: spec.clone(),
            dt,
            sqrt_dt: dt.sqrt(),
            state: init.to_vec(),
            drift: vec![0.0; init.len()],
            absorbed: init[spec.noisy()] == 0.0,
            steps: 0,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Noisy coordinate has hit 0.
    pub fn absorbed(&self) -> bool {
        self.absorbed
    }

    /// Nothing can change any more: the noisy coordinate is absorbed and so
    /// is every infected stage.
    pub fn frozen(&self) -> bool {
        self.absorbed && (self.spec.variant == SdeVariant::Feller || self.state[1..=self.spec.stages].iter().all(|&v| v == 0.0))
    }

    /// Advances by `dt` using the standard normal `z`.
    pub fn step(&mut self, z: f64) -> Result<()> {
        let c = self.spec.noisy();
        drift_into(&self.state, &self.spec, &mut self.drift);
        let noise = (2.0 * self.state[c].max(0.0)).sqrt() * self.sqrt_dt * z;
        for (j, (x, b)) in self.state.iter_mut().zip(&self.drift).enumerate() {
            let mut next = *x + b * self.dt;
            if j == c {
                next = if self.absorbed { 0.0 } else { next + noise };
            }
            *x = next.max(0.0);
        }
        if self.state[c] == 0.0 {
            self.absorbed = true;
        }
        self.steps += 1;
        if let Some(bad) = self.state.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericalEscape(format!("SDE state became {bad} at t = {}", self.time())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionPath {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
    pub seed: RngSeed,
    pub dt: f64,
    /// The run stopped early because the state can no longer change; values
    /// after the last sample equal the last sample.
    pub frozen: bool,
    pub horizon: f64,
}

impl DiffusionPath {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.times.len() - 1)
    }

    /// State at the last sample at or before `t`, for `t` within the horizon.
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        if t > self.horizon * (1.0 + 1e-12) {
            return None;
        }
        self.index_at(t + 1e-9 * self.dt).map(|i| self.row(i))
    }
}

impl SamplePath for DiffusionPath {
    fn dim(&self) -> usize {
        self.dim
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

/// Integrates with normals drawn from `noise`, one per step.
pub fn integrate_sde_driven(
    spec: &SdeSpec,
    init: &[f64],
    config: SdeConfig,
    seed: RngSeed,
    mut noise: impl FnMut() -> f64,
) -> Result<DiffusionPath> {
    config.validate()?;
    let mut st = Stepper::new(spec, init, config.dt)?;
    let total = config.steps();
    let mut times = vec![0.0];
    let mut values = init.to_vec();
    let mut frozen = false;
    for i in 1..=total {
        st.step(noise())?;
        let keep = i % config.stride as u64 == 0 || i == total;
        frozen = st.frozen();
        if keep || frozen {
            times.push(st.time());
            values.extend_from_slice(st.state());
        }
        if frozen {
            break;
        }
    }
    Ok(DiffusionPath {
        times,
        dim: spec.dim(),
        values,
        seed,
        dt: config.dt,
        frozen,
        horizon: config.horizon,
    })
}

pub fn integrate_sde(spec: &SdeSpec, init: &[f64], config: SdeConfig, seed: RngSeed) -> Result<DiffusionPath> {
    let mut rng = seed.rng();
    integrate_sde_driven(spec, init, config, seed, || normal(&mut rng))
}

pub fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// State at each of `times` (ascending) for one replica, without storing the path.
pub fn sample_at_times(spec: &SdeSpec, init: &[f64], dt: f64, times: &[f64], rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
    ensure(times.windows(2).all(|w| w[0] <= w[1]), || "observation times must be sorted".into())?;
    let mut st = Stepper::new(spec, init, dt)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let target = (t / dt + 1e-9).floor() as u64;
        while st.steps < target {
            if st.frozen() {
                // keep the stream position independent of early freezing
                let skip = target - st.steps;
                for _ in 0..skip {
                    normal(rng);
                }
                st.steps = target;
                break;
            }
            st.step(normal(rng))?;
        }
        out.push(st.state().to_vec());
    }
    Ok(out)
}

/// Controls of the deterministic phase of [`terminal_outbreak`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConfig {
    pub ode_dt: f64,
    /// Stop once the remaining infected mass drops below this.
    pub eps_tail: f64,
    /// Maximal length of the deterministic phase.
    pub max_horizon: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self { ode_dt: 1e-2, eps_tail: 1e-8, max_horizon: 1e4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutbreakRecord {
    pub seed: RngSeed,
    pub dt: f64,
    #[serde(rename = "T0_A1_grid")]
    pub t0_grid: f64,
    /// Remaining infected mass added at the end of the deterministic phase.
    #[serde(rename = "A_tail")]
    pub tail: f64,
    #[serde(rename = "A_Kplus1_inf")]
    pub outbreak: f64,
}

/// Limiting outbreak size: noisy phase until stage 1 dies out (on the grid),
/// then the unforced ODE until the infected mass is negligible.
///
/// `config.horizon` bounds the noisy phase.
pub fn terminal_outbreak(
    spec: &SdeSpec,
    init: &[f64],
    config: SdeConfig,
    tail: TailConfig,
    seed: RngSeed,
) -> Result<OutbreakRecord> {
    let mut rng = seed.rng();
    terminal_outbreak_with(spec, init, config, tail, seed, &mut rng)
}

pub fn terminal_outbreak_with(
    spec: &SdeSpec,
    init: &[f64],
    config: SdeConfig,
    tail: TailConfig,
    seed: RngSeed,
    rng: &mut SimRng,
) -> Result<OutbreakRecord> {
    if spec.variant != SdeVariant::Intermediate {
        return Err(contract("terminal outbreak is defined for the intermediate drift"));
    }
    config.validate()?;
    let k = spec.stages;
    let mut st = Stepper::new(spec, init, config.dt)?;
    let max_steps = config.steps();
    while !st.absorbed() {
        if st.steps >= max_steps {
            return Err(Error::NonConvergence {
                what: format!("stage 1 still alive at the noisy-phase horizon {}", config.horizon),
                residual: st.state()[1],
                partial: st.state()[k + 1],
            });
        }
        st.step(normal(rng))?;
    }
    let t0 = st.time();
    let a = st.state();
    if k == 1 {
        return Ok(OutbreakRecord { seed, dt: config.dt, t0_grid: t0, tail: 0.0, outbreak: a[2] });
    }

    let mut x: Vec<f64> = std::iter::once(a[0]).chain(a[2..].iter().copied()).collect();
    let mass = |x: &[f64]| x[1..k].iter().sum::<f64>();
    let chunk = 10.0;
    let mut elapsed = 0.0;
    while mass(&x) >= tail.eps_tail {
        if elapsed >= tail.max_horizon {
            return Err(Error::NonConvergence {
                what: format!("deterministic phase did not reach {} within {}", tail.eps_tail, tail.max_horizon),
                residual: mass(&x),
                partial: x[k],
            });
        }
        let sol = integrate_ode(&x, &Forcing::Zero, &spec.gamma, OdeConfig { dt: tail.ode_dt, horizon: chunk })?;
        x = sol.last().to_vec();
        elapsed += chunk;
    }
    let s = mass(&x);
    Ok(OutbreakRecord { seed, dt: config.dt, t0_grid: t0, tail: s, outbreak: x[k] + s })
}
