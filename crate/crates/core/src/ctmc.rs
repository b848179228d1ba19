//! Exact event-driven simulation of the multistage epidemic chain.
//!
//! Each step draws an exponential holding time with the total rate, then the
//! event class (progression or infection) and then the stage, both with
//! probability proportional to the individual rates. `K` is small, so both
//! categorical draws are linear scans.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure, Result};
use crate::model::{ModelParams, PopulationState};
use crate::path::{extinction_time, SamplePath};
use crate::rng::{RngSeed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Run until no infected individual is left.
    Absorption,
    /// Run up to the given model time.
    Horizon(f64),
    /// Run until stage 1 is empty.
    Stage1Extinction,
}

impl StopRule {
    fn validate(&self) -> Result<()> {
        match *self {
            StopRule::Horizon(t) => ensure(t >= 0.0 && !t.is_nan(), || {
                format!("horizon must be >= 0, got {t}")
            }),
            _ => Ok(()),
        }
    }
}

/// What a run keeps in memory.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Recording {
    /// Every event.
    #[default]
    Full,
    /// The exact state at each of these (ascending) times.
    Grid(Vec<f64>),
    /// Only the initial and final states.
    FinalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingKind {
    Full,
    Grid,
    FinalOnly,
}

/// One run of the chain.
///
/// Samples are stored flat: sample `i` has time `times[i]` and counts
/// `states[i*(K+2)..(i+1)*(K+2)]`. In full mode sample 0 is the initial state
/// at time 0 and every further sample is one event.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: ModelParams,
    pub seed: RngSeed,
    pub stop_rule: StopRule,
    pub kind: RecordingKind,
    times: Vec<f64>,
    states: Vec<u64>,
    /// Right end of the window on which the path is known.
    pub end_time: f64,
    pub final_state: PopulationState,
    /// `N_k`: individuals ever in stage `k`, for `k = 1..=K`.
    pub infection_counters: Vec<u64>,
    pub event_count: u64,
}

impl Trajectory {
    pub fn stages(&self) -> usize {
        self.params.stages
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Counts of sample `i`.
    pub fn state(&self, i: usize) -> &[u64] {
        let d = self.params.dim();
        &self.states[i * d..(i + 1) * d]
    }

    pub fn initial_state(&self) -> &[u64] {
        self.state(0)
    }

    /// Counts at model time `t` (cadlag lookup).
    pub fn state_at(&self, t: f64) -> Option<&[u64]> {
        if t > self.end_time && self.stop_rule != StopRule::Absorption {
            return None;
        }
        self.index_at(t).map(|i| self.state(i))
    }

    /// Time of the first sample where stage 1 is empty.
    pub fn stage1_extinction_time(&self) -> f64 {
        extinction_time(self, 1).unwrap_or(f64::INFINITY)
    }

    /// Checks conservation, monotonicity of `a_0` and `a_{K+1}`, single-step
    /// transitions (full mode), absorption, and the infection counters.
    pub fn check_invariants(&self) -> Result<()> {
        let d = self.params.dim();
        let k_max = self.params.stages;
        let n = self.params.n;
        for i in 0..self.len() {
            let s = self.state(i);
            let sum: u64 = s.iter().sum();
            ensure(sum == n, || format!("sample {i}: state sums to {sum}, n = {n}"))?;
            if i > 0 {
                let p = self.state(i - 1);
                ensure(s[0] <= p[0], || format!("sample {i}: a_0 increased"))?;
                ensure(s[d - 1] >= p[d - 1], || format!("sample {i}: a_K+1 decreased"))?;
                ensure(self.times[i] > self.times[i - 1] || self.kind != RecordingKind::Full, || {
                    format!("sample {i}: event times not strictly increasing")
                })?;
                if self.kind == RecordingKind::Full {
                    ensure(is_single_transition(p, s, k_max), || {
                        format!("sample {i}: not a single allowed transition")
                    })?;
                }
            }
        }
        let last = self.state(self.len() - 1);
        ensure(last == self.final_state.counts.as_slice() || self.kind == RecordingKind::Grid, || {
            "last sample differs from final state".into()
        })?;
        if self.stop_rule == StopRule::Absorption {
            ensure(self.final_state.is_absorbing(), || "final state is not absorbing".into())?;
            if self.kind == RecordingKind::Full {
                let early = (0..self.len() - 1).any(|i| self.state(i)[1..=k_max].iter().all(|&x| x == 0));
                ensure(!early, || "an earlier state is already absorbing".into())?;
            }
        }
        let init = self.initial_state();
        if init[d - 1] == 0 && self.final_state.is_absorbing() {
            ensure(self.infection_counters[k_max - 1] == self.final_state.removed(), || {
                format!(
                    "N_K = {} differs from terminal removed count {}",
                    self.infection_counters[k_max - 1],
                    self.final_state.removed()
                )
            })?;
        }
        Ok(())
    }
}

fn is_single_transition(prev: &[u64], next: &[u64], k_max: usize) -> bool {
    let diff: Vec<i64> = prev
        .iter()
        .zip(next)
        .map(|(&p, &q)| q as i64 - p as i64)
        .collect();
    let minus: Vec<usize> = (0..diff.len()).filter(|&i| diff[i] == -1).collect();
    let plus: Vec<usize> = (0..diff.len()).filter(|&i| diff[i] == 1).collect();
    let others_zero = diff.iter().all(|&x| (-1..=1).contains(&x));
    if !(others_zero && minus.len() == 1 && plus.len() == 1) {
        return false;
    }
    let (from, to) = (minus[0], plus[0]);
    // progression k -> k+1 or infection 0 -> k
    (1..=k_max).contains(&from) && to == from + 1 || from == 0 && (1..=k_max).contains(&to)
}

impl SamplePath for Trajectory {
    fn dim(&self) -> usize {
        self.params.dim()
    }
    fn len(&self) -> usize {
        self.times.len()
    }
    fn time(&self, i: usize) -> f64 {
        self.times[i]
    }
    fn value(&self, i: usize, coord: usize) -> f64 {
        self.states[i * self.params.dim() + coord] as f64
    }
}

struct Recorder {
    kind: RecordingKind,
    grid: Vec<f64>,
    next_grid: usize,
    times: Vec<f64>,
    states: Vec<u64>,
}

impl Recorder {
    fn new(recording: Recording, init: &[u64]) -> Self {
        let (kind, grid) = match recording {
            Recording::Full => (RecordingKind::Full, Vec::new()),
            Recording::Grid(g) => (RecordingKind::Grid, g),
            Recording::FinalOnly => (RecordingKind::FinalOnly, Vec::new()),
        };
        let mut rec = Self {
            kind,
            grid,
            next_grid: 0,
            times: Vec::new(),
            states: Vec::new(),
        };
        if kind != RecordingKind::Grid {
            rec.times.push(0.0);
            rec.states.extend_from_slice(init);
        }
        rec
    }

    /// Called with the state in force up to (excluding) `t_next`.
    #[inline]
    fn before_jump(&mut self, state: &[u64], t_next: f64) {
        while self.next_grid < self.grid.len() && self.grid[self.next_grid] < t_next {
            self.times.push(self.grid[self.next_grid]);
            self.states.extend_from_slice(state);
            self.next_grid += 1;
        }
    }

    #[inline]
    fn after_jump(&mut self, state: &[u64], t: f64) {
        if self.kind == RecordingKind::Full {
            self.times.push(t);
            self.states.extend_from_slice(state);
        }
    }

    fn finish(&mut self, state: &[u64], known_until: f64, t: f64) {
        self.before_jump(state, known_until.next_up());
        if self.kind == RecordingKind::FinalOnly && (self.times.len() == 1) {
            self.times.push(t);
            self.states.extend_from_slice(state);
        }
    }
}

fn validate_grid(grid: &[f64], stop_rule: StopRule) -> Result<()> {
    ensure(grid.iter().all(|t| *t >= 0.0 && t.is_finite()), || {
        "grid times must be finite and >= 0".into()
    })?;
    ensure(grid.windows(2).all(|w| w[0] < w[1]), || {
        "grid times must be strictly increasing".into()
    })?;
    if let (StopRule::Horizon(h), Some(&last)) = (stop_rule, grid.last()) {
        ensure(last <= h, || format!("grid time {last} beyond horizon {h}"))?;
    }
    Ok(())
}

/// Exact simulation of the chain from `init` with a fresh generator built from `seed`.
pub fn simulate_path(
    params: &ModelParams,
    init: &PopulationState,
    stop_rule: StopRule,
    seed: RngSeed,
) -> Result<Trajectory> {
    simulate_recorded(params, init, stop_rule, seed, Recording::Full)
}

pub fn simulate_recorded(
    params: &ModelParams,
    init: &PopulationState,
    stop_rule: StopRule,
    seed: RngSeed,
    recording: Recording,
) -> Result<Trajectory> {
    let mut rng = seed.rng();
    simulate_with_rng(params, init, stop_rule, seed, recording, &mut rng)
}

/// Same as [`simulate_recorded`] but draws from a caller-owned generator;
/// `seed` is only recorded.
pub fn simulate_with_rng(
    params: &ModelParams,
    init: &PopulationState,
    stop_rule: StopRule,
    seed: RngSeed,
    recording: Recording,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    params.validate()?;
    init.check_against(params)?;
    stop_rule.validate()?;
    if let Recording::Grid(g) = &recording {
        validate_grid(g, stop_rule)?;
    }

    let stages = params.stages;
    let n = params.n as f64;
    let prog_factor: Vec<f64> = (1..=stages).map(|k| params.progression_factor(k)).collect();
    let inf_factor: Vec<f64> = (1..=stages).map(|k| params.infection_factor(k)).collect();

    let mut state = init.counts.clone();
    let mut counters: Vec<u64> = state[1..=stages].to_vec();
    let mut rec = Recorder::new(recording, &state);
    let mut t = 0.0_f64;
    let mut events = 0_u64;
    let horizon = match stop_rule {
        StopRule::Horizon(h) => h,
        _ => f64::INFINITY,
    };

    loop {
        if stop_rule == StopRule::Stage1Extinction && state[1] == 0 {
            break;
        }
        let mut prog_total = 0.0;
        let mut inf_weight = 0.0;
        for k in 0..stages {
            let ak = state[k + 1] as f64;
            prog_total += prog_factor[k] * ak;
            inf_weight += inf_factor[k] * ak;
        }
        let inf_total = inf_weight * state[0] as f64 / n;
        let total = prog_total + inf_total;
        if total <= 0.0 {
            break;
        }
        let hold: f64 = Exp1.sample(rng);
        let t_next = t + hold / total;
        if t_next > horizon {
            break;
        }
        rec.before_jump(&state, t_next);
        t = t_next;

        let class_draw: f64 = rng.random::<f64>() * total;
        let stage_draw: f64 = rng.random::<f64>();
        if class_draw < prog_total {
            let k = pick(&prog_factor, &state[1..=stages], stage_draw * prog_total);
            state[k + 1] -= 1;
            state[k + 2] += 1;
            if k + 1 < stages {
                counters[k + 1] += 1;
            }
        } else {
            let k = pick(&inf_factor, &state[1..=stages], stage_draw * inf_weight);
            state[0] -= 1;
            state[k + 1] += 1;
            counters[k] += 1;
        }
        events += 1;
        rec.after_jump(&state, t);
    }

    let end_time = match stop_rule {
        StopRule::Horizon(h) => h,
        StopRule::Absorption => t,
        StopRule::Stage1Extinction => t,
    };
    let known_until = if state[1..=stages].iter().all(|&x| x == 0) {
        f64::INFINITY
    } else {
        end_time
    };
    rec.finish(&state, known_until, t);

    Ok(Trajectory {
        params: params.clone(),
        seed,
        stop_rule,
        kind: rec.kind,
        times: rec.times,
        states: rec.states,
        end_time,
        final_state: PopulationState::new(state),
        infection_counters: counters,
        event_count: events,
    })
}

/// Index `k` (0-based stage) with `sum_{j<k} w_j a_j <= target < sum_{j<=k} w_j a_j`.
#[inline]
fn pick(factor: &[f64], counts: &[u64], target: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, (&f, &a)) in factor.iter().zip(counts).enumerate() {
        let w = f * a as f64;
        if w > 0.0 {
            acc += w;
            last_positive = k;
            if target < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Fixed-step tau-leaping approximation, recorded on the step grid.
///
/// Exploratory only: it is not exact and is never used by the studies.
pub fn simulate_tau_leap(
    params: &ModelParams,
    init: &PopulationState,
    horizon: f64,
    step: f64,
    seed: RngSeed,
) -> Result<Trajectory> {
    params.validate()?;
    init.check_against(params)?;
    ensure(step > 0.0 && horizon >= 0.0, || "need step > 0 and horizon >= 0".into())?;
    let stages = params.stages;
    let n = params.n as f64;
    let mut rng = seed.rng();
    let mut state = init.counts.clone();
    let mut counters: Vec<u64> = state[1..=stages].to_vec();
    let mut times = vec![0.0];
    let mut states = state.clone();
    let steps = (horizon / step).floor() as u64;
    let mut events = 0;

    let poisson = |mean: f64, rng: &mut SimRng| -> u64 {
        if mean <= 0.0 {
            0
        } else {
            Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
        }
    };

    for s in 1..=steps {
        if state[1..=stages].iter().all(|&x| x == 0) {
            times.push(s as f64 * step);
            states.extend_from_slice(&state);
            continue;
        }
        let snapshot = state.clone();
        let a0 = snapshot[0] as f64;
        for k in 1..=stages {
            let moved =
                poisson(params.progression_factor(k) * snapshot[k] as f64 * step, &mut rng).min(state[k]);
            state[k] -= moved;
            state[k + 1] += moved;
            if k < stages {
                counters[k] += moved;
            }
            events += moved;
        }
        for k in 1..=stages {
            let mean = params.infection_factor(k) * snapshot[k] as f64 * a0 / n * step;
            let infected = poisson(mean, &mut rng).min(state[0]);
            state[0] -= infected;
            state[k] += infected;
            counters[k - 1] += infected;
            events += infected;
        }
        times.push(s as f64 * step);
        states.extend_from_slice(&state);
    }

    Ok(Trajectory {
        params: params.clone(),
        seed,
        stop_rule: StopRule::Horizon(horizon),
        kind: RecordingKind::Grid,
        times,
        states,
        end_time: horizon,
        final_state: PopulationState::new(state),
        infection_counters: counters,
        event_count: events,
    })
}

/// Shifts a full trajectory to start at time `t` and drops stage 1, giving a
/// `(K-1)`-stage epidemic on the same population.
///
/// Stage 1 must be empty from `t` on; once it is empty it stays empty, so any
/// `t >= T_0(a_1)` qualifies.
pub fn shift_and_project(path: &Trajectory, t: f64) -> Result<Trajectory> {
    let k = path.params.stages;
    ensure(k >= 2, || "projection needs K >= 2".into())?;
    ensure(t >= 0.0 && t.is_finite(), || format!("shift time must be finite and >= 0, got {t}"))?;
    ensure(path.kind == RecordingKind::Full, || "projection needs a full event record".into())?;
    if t > path.end_time && path.stop_rule != StopRule::Absorption {
        return Err(contract(format!(
            "shift time {t} beyond the known window [0, {}]",
            path.end_time
        )));
    }
    let start = path.index_at(t).ok_or_else(|| contract("shift time precedes the path"))?;
    if path.state(start)[1] != 0 {
        return Err(contract(format!(
            "stage 1 holds {} individuals at the shift time; projection is not an epidemic",
            path.state(start)[1]
        )));
    }

    let params = ModelParams::new(
        path.params.n,
        k - 1,
        path.params.delta[1..].to_vec(),
        path.params.epsilon[1..].to_vec(),
    )?;
    let project = |s: &[u64]| -> Vec<u64> {
        let mut v = Vec::with_capacity(s.len() - 1);
        v.push(s[0]);
        v.extend_from_slice(&s[2..]);
        v
    };

    let mut times = vec![0.0];
    let mut states = project(path.state(start));
    let mut counters: Vec<u64> = states[1..k].to_vec();
    for i in start + 1..path.len() {
        let (prev, next) = (project(path.state(i - 1)), project(path.state(i)));
        // new arrivals in stages 1..=K-1 of the projected chain
        if next[0] < prev[0] {
            let to = (1..k).find(|&j| next[j] > prev[j]).unwrap_or(1);
            counters[to - 1] += 1;
        } else if let Some(to) = (2..k).find(|&j| next[j] > prev[j]) {
            counters[to - 1] += 1;
        }
        times.push(path.time(i) - t);
        states.extend_from_slice(&next);
    }
    let final_state = PopulationState::new(states[states.len() - (k + 1)..].to_vec());
    Ok(Trajectory {
        params,
        seed: path.seed,
        stop_rule: path.stop_rule,
        kind: RecordingKind::Full,
        event_count: (times.len() - 1) as u64,
        times,
        states,
        end_time: (path.end_time - t).max(0.0),
        final_state,
        infection_counters: counters,
    })
}

/// Summary record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub seed: RngSeed,
    pub n: u64,
    #[serde(rename = "K")]
    pub stages: usize,
    pub delta: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub stop_rule: StopRule,
    pub final_state: Vec<u64>,
    #[serde(rename = "N")]
    pub infection_counters: Vec<u64>,
    /// `None` when stage 1 never empties on the observed window.
    #[serde(rename = "T0_stage1")]
    pub stage1_extinction: Option<f64>,
    pub events: u64,
    /// Initial infecteds are counted in `N` for their initial stage.
    pub counter_convention: String,
}

impl Trajectory {
    pub fn summary(&self) -> TrajectorySummary {
        let t0 = self.stage1_extinction_time();
        TrajectorySummary {
            seed: self.seed,
            n: self.params.n,
            stages: self.params.stages,
            delta: self.params.delta.clone(),
            epsilon: self.params.epsilon.clone(),
            stop_rule: self.stop_rule,
            final_state: self.final_state.counts.clone(),
            infection_counters: self.infection_counters.clone(),
            stage1_extinction: t0.is_finite().then_some(t0),
            events: self.event_count,
            counter_convention: COUNTER_CONVENTION.into(),
        }
    }
}

pub const COUNTER_CONVENTION: &str =
    "N_k counts individuals at entry into stage k; initial infecteds count for their initial stage";

#[cfg(test)]
mod tests {
    use super::*;

    fn sir(n: u64) -> ModelParams {
        ModelParams::critical(n, 1).unwrap()
    }

    #[test]
    fn absorbing_start_has_no_events() {
        let p = ModelParams::critical(20, 2).unwrap();
        let init = PopulationState::new(vec![15, 0, 0, 5]);
        let tr = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(1, 0)).unwrap();
        assert_eq!(tr.event_count, 0);
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.final_state, init);
        assert_eq!(tr.infection_counters, vec![0, 0]);
    }

    #[test]
    fn absorption_run_satisfies_invariants() {
        let p = ModelParams::new(500, 3, vec![0.05, 0.0, -0.02], vec![0.1, 0.0, 0.03]).unwrap();
        let init = PopulationState::from_infected(500, &[8, 0, 0]).unwrap();
        for s in 0..20 {
            let tr = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(9, s)).unwrap();
            tr.check_invariants().unwrap();
        }
    }

    #[test]
    fn reproducible_bit_exact() {
        let p = sir(1000);
        let init = PopulationState::from_infected(1000, &[10]).unwrap();
        let a = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(5, 3)).unwrap();
        let b = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(5, 3)).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(5, 4)).unwrap();
        assert_ne!(a.times(), c.times());
    }

    #[test]
    fn negative_horizon_rejected() {
        let p = sir(10);
        let init = PopulationState::from_infected(10, &[1]).unwrap();
        assert!(simulate_path(&p, &init, StopRule::Horizon(-1.0), RngSeed::new(0, 0)).is_err());
    }

    #[test]
    fn horizon_run_stops_before_horizon() {
        let p = sir(1000);
        let init = PopulationState::from_infected(1000, &[30]).unwrap();
        let tr = simulate_path(&p, &init, StopRule::Horizon(2.0), RngSeed::new(2, 0)).unwrap();
        assert!(tr.times().iter().all(|&t| t <= 2.0));
        assert_eq!(tr.end_time, 2.0);
        tr.check_invariants().unwrap();
    }

    #[test]
    fn stage1_rule_stops_at_extinction() {
        let p = ModelParams::critical(2000, 2).unwrap();
        let init = PopulationState::from_infected(2000, &[7, 0]).unwrap();
        let tr = simulate_path(&p, &init, StopRule::Stage1Extinction, RngSeed::new(3, 1)).unwrap();
        assert_eq!(tr.final_state.counts[1], 0);
        assert_eq!(tr.stage1_extinction_time(), tr.end_time);
    }

    #[test]
    fn grid_recording_matches_full_record() {
        let p = ModelParams::critical(300, 2).unwrap();
        let init = PopulationState::from_infected(300, &[6, 0]).unwrap();
        let seed = RngSeed::new(11, 2);
        let full = simulate_path(&p, &init, StopRule::Horizon(8.0), seed).unwrap();
        let grid: Vec<f64> = (0..=16).map(|i| i as f64 * 0.5).collect();
        let thin =
            simulate_recorded(&p, &init, StopRule::Horizon(8.0), seed, Recording::Grid(grid.clone()))
                .unwrap();
        assert_eq!(thin.len(), grid.len());
        for (i, &g) in grid.iter().enumerate() {
            assert_eq!(thin.state(i), full.state_at(g).unwrap(), "grid point {g}");
        }
        assert_eq!(thin.final_state, full.final_state);
    }

    #[test]
    fn final_only_recording_keeps_endpoints() {
        let p = sir(200);
        let init = PopulationState::from_infected(200, &[5]).unwrap();
        let seed = RngSeed::new(4, 4);
        let full = simulate_path(&p, &init, StopRule::Absorption, seed).unwrap();
        let lean = simulate_recorded(&p, &init, StopRule::Absorption, seed, Recording::FinalOnly).unwrap();
        assert_eq!(lean.len(), 2);
        assert_eq!(lean.final_state, full.final_state);
        assert_eq!(lean.infection_counters, full.infection_counters);
        assert_eq!(lean.end_time, full.end_time);
    }

    #[test]
    fn counters_follow_entries() {
        let p = ModelParams::critical(400, 3).unwrap();
        let init = PopulationState::new(vec![390, 4, 3, 3, 0]);
        let tr = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(8, 8)).unwrap();
        let mut expect = vec![4_u64, 3, 3];
        for i in 1..tr.len() {
            let (a, b) = (tr.state(i - 1), tr.state(i));
            for k in 1..=3 {
                let entered = b[k] > a[k];
                if entered {
                    expect[k - 1] += 1;
                }
            }
        }
        assert_eq!(tr.infection_counters, expect);
        assert_eq!(tr.infection_counters[2], tr.final_state.removed());
    }

    #[test]
    fn projection_at_extinction_is_an_epidemic() {
        let p = ModelParams::critical(3000, 3).unwrap();
        let init = PopulationState::from_infected(3000, &[10, 0, 0]).unwrap();
        let tr = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(21, 0)).unwrap();
        let t0 = tr.stage1_extinction_time();
        let shifted = shift_and_project(&tr, t0).unwrap();
        assert_eq!(shifted.params.stages, 2);
        shifted.check_invariants().unwrap();
        assert_eq!(shifted.final_state.removed(), tr.final_state.removed());
        assert_eq!(shifted.time(0), 0.0);
    }

    #[test]
    fn projection_identity_shift() {
        let p = ModelParams::critical(100, 2).unwrap();
        let init = PopulationState::new(vec![95, 0, 5, 0]);
        let tr = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(1, 1)).unwrap();
        let shifted = shift_and_project(&tr, 0.0).unwrap();
        assert_eq!(shifted.len(), tr.len());
        for i in 0..tr.len() {
            let s = tr.state(i);
            assert_eq!(shifted.state(i), &[s[0], s[2], s[3]]);
            assert_eq!(shifted.time(i), tr.time(i));
        }
    }

    #[test]
    fn projection_errors() {
        let p = sir(50);
        let init = PopulationState::from_infected(50, &[2]).unwrap();
        let tr = simulate_path(&p, &init, StopRule::Absorption, RngSeed::new(1, 1)).unwrap();
        assert!(shift_and_project(&tr, 0.0).is_err());

        let p2 = ModelParams::critical(500, 2).unwrap();
        let init2 = PopulationState::from_infected(500, &[5, 0]).unwrap();
        let tr2 = simulate_path(&p2, &init2, StopRule::Horizon(1.0), RngSeed::new(1, 2)).unwrap();
        assert!(shift_and_project(&tr2, 5.0).is_err());
        // stage 1 still occupied at time 0
        assert!(shift_and_project(&tr2, 0.0).is_err());
    }

    #[test]
    fn tau_leap_conserves_population() {
        let p = ModelParams::critical(10_000, 2).unwrap();
        let init = PopulationState::from_infected(10_000, &[50, 0]).unwrap();
        let tr = simulate_tau_leap(&p, &init, 20.0, 0.05, RngSeed::new(3, 3)).unwrap();
        for i in 0..tr.len() {
            assert_eq!(tr.state(i).iter().sum::<u64>(), 10_000);
        }
    }
}
