//! Sampled numerical certification of the Lyapunov constructions.
//!
//! Every check reports its worst margin and where it occurred. A check
//! passes iff `worst_margin ≥ -tolerance`. Random sampling is driven by a
//! seeded ChaCha8 generator, so rerunning with the same seed reproduces
//! every margin bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lyap::IssLyapunov;
use crate::lyap_df::{DfLyapunov, DfRegion};
use crate::lyap_en::{check_condition_50, EnLyapParams, EnLyapunov, EnRegion, COND50_SAMPLES};
use crate::math::{abs, dot3, exp, pow, sqrt};
use crate::model::{Deviation, ModelParams, State};
use crate::ode::{integrate, steady_state, InputSignal, SteadyStateOptions, Trajectory};
use crate::{Error, Result, DEFAULT_SEED};

/// Where a check attained its worst margin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "at", rename_all = "snake_case")]
pub enum Location {
    #[default]
    None,
    Deviation(Deviation),
    State(State),
    Time(f64),
    Input(f64),
    Level(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub worst_location: Location,
    pub samples: usize,
    pub tolerance: f64,
}

/// Running minimum of margins; NaN counts as a violation.
#[derive(Debug, Clone)]
pub struct MarginTracker {
    name: String,
    tolerance: f64,
    worst: f64,
    at: Location,
    samples: usize,
}

impl MarginTracker {
    pub fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: String::from(name),
            tolerance,
            worst: f64::INFINITY,
            at: Location::None,
            samples: 0,
        }
    }

    pub fn observe(&mut self, margin: f64, at: Location) {
        let m = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        self.samples += 1;
        if m < self.worst || self.samples == 1 {
            self.worst = m;
            self.at = at;
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn finish(self) -> CheckResult {
        let worst = if self.samples == 0 { 0.0 } else { self.worst };
        CheckResult {
            name: self.name,
            passed: self.samples > 0 && worst >= -self.tolerance,
            worst_margin: worst,
            worst_location: self.at,
            samples: self.samples,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn push(&mut self, c: CheckResult) {
        self.checks.push(c);
    }

    pub fn extend(&mut self, cs: impl IntoIterator<Item = CheckResult>) {
        self.checks.extend(cs);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "-"),
            Self::Deviation(d) => write!(f, "x~=({:.6e}, {:.6e}, {:.6e})", d.x1, d.x2, d.x3),
            Self::State(s) => write!(f, "x=({:.6e}, {:.6e}, {:.6e})", s.s, s.i, s.r),
            Self::Time(t) => write!(f, "t={t:.6e}"),
            Self::Input(u) => write!(f, "u={u:.6e}"),
            Self::Level(l) => write!(f, "L={l:.6e}"),
        }
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(4).max(4);
        writeln!(f, "{:<width$}  {:<4}  {:>13}  {:>8}  location", "name", "pass", "margin", "samples")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<width$}  {:<4}  {:>13.6e}  {:>8}  {}",
                c.name,
                if c.passed { "yes" } else { "NO" },
                c.worst_margin,
                c.samples,
                c.worst_location
            )?;
        }
        Ok(())
    }
}

/// Required decay of V along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecaySpec {
    /// D⁺V ≤ 0.
    NonIncreasing,
    /// D⁺V ≤ -rate·V, checked in the discrete form V(e^{-rate·h} - 1)/h.
    Exponential { rate: f64 },
}

/// Relative tolerance of forward-difference Dini estimates, scaled by 1 + V.
pub const TOL_FD: f64 = 1e-6;

fn same_model(a: &ModelParams, b: &ModelParams) -> bool {
    a == b
}

/// Forward-difference estimates of D⁺V along `traj` compared with `spec`
/// while V ≥ `v_floor`. Margins are ((allowed - D⁺V)/(1 + V)).
pub fn check_dini_along_trajectory<L: IssLyapunov>(
    lyap: &L,
    traj: &Trajectory,
    spec: DecaySpec,
    v_floor: f64,
) -> Result<CheckResult> {
    if !same_model(&traj.params, lyap.model()) {
        return Err(Error::MismatchedEquilibrium);
    }
    let eq = lyap.equilibrium();
    let mut tr = MarginTracker::new("dini_along_trajectory", TOL_FD);
    let mut prev = match traj.states.first() {
        Some(x) => lyap.value(&eq.deviation(x)).unwrap_or(f64::NAN),
        None => return Ok(tr.finish()),
    };
    for i in 0..traj.len() - 1 {
        let v0 = prev;
        let v1 = lyap.value(&eq.deviation(&traj.states[i + 1])).unwrap_or(f64::NAN);
        prev = v1;
        if v0 < v_floor {
            break;
        }
        let h = traj.times[i + 1] - traj.times[i];
        let allowed = match spec {
            DecaySpec::NonIncreasing => 0.0,
            DecaySpec::Exponential { rate } => v0 * (exp(-rate * h) - 1.0) / h,
        };
        let dini = (v1 - v0) / h;
        tr.observe((allowed - dini) / (1.0 + v0), Location::Time(traj.times[i]));
    }
    Ok(tr.finish())
}

/// Whether V decreased strictly at every step while V ≥ `v_floor`;
/// margin is (V_i - V_{i+1}) / (1 + V_i).
pub fn check_strict_decrease<L: IssLyapunov>(lyap: &L, traj: &Trajectory, v_floor: f64) -> Result<CheckResult> {
    if !same_model(&traj.params, lyap.model()) {
        return Err(Error::MismatchedEquilibrium);
    }
    let eq = lyap.equilibrium();
    let mut tr = MarginTracker::new("strict_decrease", 0.0);
    let values: Vec<f64> = traj
        .states
        .iter()
        .map(|x| lyap.value(&eq.deviation(x)).unwrap_or(f64::NAN))
        .collect();
    for i in 0..values.len().saturating_sub(1) {
        if values[i] < v_floor {
            break;
        }
        let m = (values[i] - values[i + 1]) / (1.0 + values[i]);
        // Strictness: a zero difference is a violation.
        tr.observe(if m > 0.0 { m } else { m - f64::MIN_POSITIVE }, Location::Time(traj.times[i]));
    }
    Ok(tr.finish())
}

/// Outcome of an ISS simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IssEnvelope {
    pub u_sup: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Threshold χ(sup|ũ|) of the ISS implication, when one exists.
    pub gain: Option<f64>,
    /// max V over the final 20% of the horizon.
    pub limsup: f64,
    pub limsup_time: f64,
    /// Whether every sample stayed in the certified set.
    pub stayed_in_set: bool,
    pub first_exit: Option<f64>,
}

/// Simulates from `x0` under `sig` and measures the tail of V.
pub fn iss_envelope<L: IssLyapunov>(lyap: &L, x0: State, sig: &InputSignal, t_end: f64, dt: f64) -> Result<IssEnvelope> {
    let p = lyap.model();
    let traj = integrate(p, x0, sig, t_end, dt)?;
    let (lo, hi) = lyap.input_range();
    let (mut u_min, mut u_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for b in &traj.inputs {
        u_min = u_min.min(b - p.b_hat);
        u_max = u_max.max(b - p.b_hat);
    }
    let u_sup = sig.sup_deviation(p.b_hat, t_end).max(abs(u_min)).max(abs(u_max));
    let lower_ok = if lo == -p.b_hat { u_min >= lo } else { u_min > lo };
    if !lower_ok || !(u_max < hi) {
        return Err(Error::Range(format!(
            "input deviation range [{u_min}, {u_max}] leaves the admissible ({lo}, {hi})"
        )));
    }
    let gain = lyap.iss_gain(u_sup);
    let eq = lyap.equilibrium();
    let tail_start = 0.8 * t_end;
    let (mut limsup, mut limsup_time) = (f64::NEG_INFINITY, tail_start);
    let mut first_exit = None;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let dev = eq.deviation(x);
        if first_exit.is_none() && !lyap.in_certified_set(&dev) {
            first_exit = Some(*t);
        }
        if *t >= tail_start {
            let v = lyap.value_extended(&dev);
            if !(v <= limsup) {
                limsup = v;
                limsup_time = *t;
            }
        }
    }
    Ok(IssEnvelope {
        u_sup,
        u_min,
        u_max,
        gain,
        limsup,
        limsup_time,
        stayed_in_set: first_exit.is_none(),
        first_exit,
    })
}

/// limsup V over the final 20% of [0, t_end] against χ(sup|ũ|)·(1 + 1e-3),
/// starting from the equilibrium.
pub fn check_iss_bound<L: IssLyapunov>(lyap: &L, sig: &InputSignal, t_end: f64, dt: f64) -> Result<CheckResult> {
    let env = iss_envelope(lyap, lyap.equilibrium().point, sig, t_end, dt)?;
    let gain = env
        .gain
        .ok_or_else(|| Error::Range(format!("no ISS threshold available for sup|u| = {}", env.u_sup)))?;
    let mut tr = MarginTracker::new("iss_bound", 1e-6);
    tr.observe(gain * (1.0 + 1e-3) - env.limsup, Location::Time(env.limsup_time));
    Ok(tr.finish())
}

/// Samples whether a trajectory stays in the certified set.
pub fn check_forward_invariance<L: IssLyapunov>(lyap: &L, x0: State, sig: &InputSignal, t_end: f64, dt: f64) -> Result<CheckResult> {
    let traj = integrate(lyap.model(), x0, sig, t_end, dt)?;
    let eq = lyap.equilibrium();
    let mut tr = MarginTracker::new("forward_invariance", 0.0);
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let inside = lyap.in_certified_set(&eq.deviation(x));
        tr.observe(if inside { 0.0 } else { -1.0 }, Location::Time(*t));
    }
    Ok(tr.finish())
}

/// Steady states along a grid of constant inputs crossing R̂₀ = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationOutcome {
    pub c_star: f64,
    pub grid: Vec<f64>,
    pub states: Vec<State>,
    pub left_limit: State,
    pub right_limit: State,
    /// Largest ‖Δx‖/Δc between adjacent grid points.
    pub lipschitz: f64,
    pub checks: Vec<CheckResult>,
}

fn dist(a: &State, b: &State) -> f64 {
    let d = [a.s - b.s, a.i - b.i, a.r - b.r];
    sqrt(dot3(d, d))
}

fn norm(a: &State) -> f64 {
    sqrt(dot3(a.to_array(), a.to_array()))
}

/// Equilibrium predicted by the closed forms for input `c`.
pub fn predicted_steady_state(p: &ModelParams, c: f64) -> State {
    let q = p.with_b_hat(c);
    if q.r0_hat() > 1.0 {
        q.endemic_eq().map(|e| e.point).unwrap_or(q.disease_free_eq().point)
    } else {
        q.disease_free_eq().point
    }
}

fn linear_limit(c0: f64, x0: &State, c1: f64, x1: &State, at: f64) -> State {
    let w = (at - c0) / (c1 - c0);
    State::new(x0.s + w * (x1.s - x0.s), x0.i + w * (x1.i - x0.i), x0.r + w * (x1.r - x0.r))
}

/// Integrates to steady state at every grid value and checks the closed
/// forms, the agreement of one-sided limits at the threshold and a finite
/// Lipschitz estimate (bounded by 1/μ, attained on the disease-free
/// branch).
pub fn check_bifurcation_continuity(p: &ModelParams, grid: &[f64], opts: SteadyStateOptions) -> Result<BifurcationOutcome> {
    let c_star = p.critical_b_hat();
    let mut states = Vec::with_capacity(grid.len());
    let mut formula = MarginTracker::new("bifurcation_formula", 1e-6);
    for &c in grid {
        let x0 = State::new(0.5 * c / p.mu + 1.0, 10.0, 10.0);
        let x = steady_state(p, c, x0, opts)?;
        let expect = predicted_steady_state(p, c);
        formula.observe(-dist(&x, &expect) / (1.0 + norm(&expect)), Location::Input(c));
        states.push(x);
    }
    let below: Vec<usize> = (0..grid.len()).filter(|&j| grid[j] < c_star).collect();
    let above: Vec<usize> = (0..grid.len()).filter(|&j| grid[j] > c_star).collect();
    if below.len() < 2 || above.len() < 2 {
        return Err(Error::InvalidParams(String::from("grid needs two points on each side of the threshold")));
    }
    let (l0, l1) = (below[below.len() - 2], below[below.len() - 1]);
    let (r0, r1) = (above[0], above[1]);
    let left = linear_limit(grid[l0], &states[l0], grid[l1], &states[l1], c_star);
    let right = linear_limit(grid[r0], &states[r0], grid[r1], &states[r1], c_star);
    let mut limits = MarginTracker::new("bifurcation_limits", 0.0);
    limits.observe(1e-3 - dist(&left, &right) / (1.0 + norm(&left)), Location::Input(c_star));
    // The disease-free branch has slope exactly 1/μ, so compare relatively.
    let mut lip = MarginTracker::new("bifurcation_lipschitz", 1e-6);
    let mut k_max: f64 = 0.0;
    for j in 0..grid.len().saturating_sub(1) {
        let k = dist(&states[j + 1], &states[j]) / abs(grid[j + 1] - grid[j]);
        k_max = k_max.max(k);
        lip.observe(1.0 - k * p.mu, Location::Input(grid[j]));
    }
    Ok(BifurcationOutcome {
        c_star,
        grid: grid.to_vec(),
        states,
        left_limit: left,
        right_limit: right,
        lipschitz: k_max,
        checks: alloc::vec![formula.finish(), limits.finish(), lip.finish()],
    })
}

/// 21-point grid c* (0.525 + 0.05 j), j = 0..20, straddling R̂₀ = 1
/// without hitting it.
pub fn default_bifurcation_grid(p: &ModelParams) -> Vec<f64> {
    let c = p.critical_b_hat();
    (0..21).map(|j| c * (0.525 + 0.05 * j as f64)).collect()
}

/// Uniform rejection sampler of deviations in Ḡ(λ̂₂, k, L̄).
///
/// (x̃₁, x̃₂) is drawn from the box [-x̂₁, L̄/λ₁] × (-x̂₂, L̄/λ₀] and kept
/// when Ṽ₁₂ ≤ L̄; x̃₃ is then drawn inside the remaining budget, mostly
/// within a few multiples of x̂₃.
pub fn sample_endemic_sublevel(lyap: &EnLyapunov, n: usize, rng: &mut ChaCha8Rng) -> Vec<Deviation> {
    let lp = *lyap.params();
    let eq = lyap.equilibrium().point;
    let mut out = Vec::with_capacity(n);
    let x1_hi = lp.l_bar / lp.lambda1;
    let x2_hi = lp.l_bar / lp.lambda0();
    let mut guard = 0usize;
    while out.len() < n && guard < 1000 * n.max(1) {
        guard += 1;
        let x1 = rng.gen_range(-eq.s..x1_hi);
        let x2 = rng.gen_range(-eq.i..x2_hi);
        let d12 = Deviation::new(x1, x2, 0.0);
        let v12 = lyap.value_extended(&d12);
        if !(v12 <= lp.l_bar) || !lyap.in_h(&d12) {
            continue;
        }
        let budget = (lp.l_bar - v12) / lp.lambda3;
        let lo = (-eq.r).max(-budget);
        let hi = if rng.gen_bool(0.8) { budget.min(3.0 * eq.r) } else { budget };
        let x3 = if hi > lo { rng.gen_range(lo..=hi) } else { 0.0 };
        let d = Deviation::new(x1, x2, x3);
        if lyap.in_certified_set(&d) {
            out.push(d);
        }
    }
    out
}

/// Options shared by the certification suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyOptions {
    pub seed: u64,
    /// Grid points per axis for the disease-free implication check.
    pub grid_n: usize,
    /// Sampled points of Ḡ for the endemic decrease check.
    pub samples: usize,
    pub boundary_samples: usize,
    pub trajectories: usize,
    pub dt: f64,
    /// Horizon; `None` means 50/μ.
    pub t_end: Option<f64>,
    pub v_floor: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            grid_n: 60,
            samples: 100_000,
            boundary_samples: 1000,
            trajectories: 50,
            dt: 0.05,
            t_end: None,
            v_floor: 1e-6,
        }
    }
}

impl CertifyOptions {
    pub fn horizon(&self, p: &ModelParams) -> f64 {
        self.t_end.unwrap_or(50.0 / p.mu)
    }
}

/// One point of the disease-free implication grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub x1t: f64,
    pub x2t: f64,
    pub x3t: f64,
    pub region: char,
    #[serde(rename = "V")]
    pub v: f64,
    pub slack: f64,
}

fn df_region_letter(r: DfRegion) -> char {
    match r {
        DfRegion::A => 'A',
        DfRegion::B => 'B',
        DfRegion::C => 'C',
    }
}

/// n³ grid over [-x̂₁, 3x̂₁] × [0, 3x̂₁]², skipping points in the boundary band.
pub fn df_grid_rows(lyap: &DfLyapunov, n: usize, u: f64) -> Vec<GridRow> {
    let x1h = lyap.equilibrium().point.s;
    let n = n.max(2);
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut rows = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                let d = Deviation::new(step(-x1h, 3.0 * x1h, i), step(0.0, 3.0 * x1h, j), step(0.0, 3.0 * x1h, l));
                let Ok(slack) = lyap.decrease_slack(&d, u) else { continue };
                rows.push(GridRow {
                    x1t: d.x1,
                    x2t: d.x2,
                    x3t: d.x3,
                    region: df_region_letter(lyap.region(&d).unwrap_or(DfRegion::A)),
                    v: lyap.value(&d).unwrap_or(f64::NAN),
                    slack,
                });
            }
        }
    }
    rows
}

/// Implication V ≥ χ(|u|) ⟹ ∇V·f ≤ -(1-δ)(μ-μ₀)V on the n³ grid, margin
/// slack/scale with scale = 1 + |∇V·f| + (1-δ)(μ-μ₀)V.
pub fn check_df_grid_implication(lyap: &DfLyapunov, n: usize, inputs: &[f64]) -> CheckResult {
    let mut tr = MarginTracker::new("df_grid_implication", 1e-12);
    let rate = lyap.decay_rate();
    for &u in inputs {
        let chi = lyap.chi(abs(u));
        for row in df_grid_rows(lyap, n, u) {
            if row.v < chi {
                continue;
            }
            let lie = -row.slack - rate * row.v;
            let scale = 1.0 + abs(lie) + rate * row.v;
            tr.observe(row.slack / scale, Location::Deviation(Deviation::new(row.x1t, row.x2t, row.x3t)));
        }
    }
    tr.finish()
}

/// One-sided values at random points of both region boundaries.
pub fn check_df_continuity(lyap: &DfLyapunov, n: usize, seed: u64) -> CheckResult {
    let x1h = lyap.equilibrium().point.s;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = MarginTracker::new("df_continuity", 0.0);
    for _ in 0..n {
        let x2 = rng.gen_range(0.0..3.0 * x1h);
        let x3 = rng.gen_range(0.0..3.0 * x1h);
        let d = Deviation::new(0.0, x2, x3);
        let (a, b) = (lyap.segment_value(DfRegion::A, &d), lyap.segment_value(DfRegion::B, &d));
        tr.observe(1e-9 - abs(a - b) / a.abs().max(b.abs()).max(1.0), Location::Deviation(d));
        let e = Deviation::new(lyap.bc_threshold(&d), x2, x3);
        let (b, c) = (lyap.segment_value(DfRegion::B, &e), lyap.segment_value(DfRegion::C, &e));
        tr.observe(1e-9 - abs(b - c) / b.abs().max(c.abs()).max(1.0), Location::Deviation(e));
    }
    tr.finish()
}

pub fn check_df_positive_definite(lyap: &DfLyapunov, n: usize, seed: u64) -> CheckResult {
    let x1h = lyap.equilibrium().point.s;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = MarginTracker::new("df_positive_definite", 0.0);
    tr.observe(-abs(lyap.value(&Deviation::ZERO).unwrap_or(f64::NAN)), Location::Deviation(Deviation::ZERO));
    for _ in 0..n {
        let d = Deviation::new(rng.gen_range(-x1h..3.0 * x1h), rng.gen_range(0.0..3.0 * x1h), rng.gen_range(0.0..3.0 * x1h));
        if d.norm() == 0.0 {
            continue;
        }
        let v = lyap.value(&d).unwrap_or(f64::NAN);
        tr.observe(if v > 0.0 { v / (1.0 + d.norm()) } else { -1.0 }, Location::Deviation(d));
    }
    tr.finish()
}

/// Random physical initial states for the disease-free function.
pub fn df_random_starts(lyap: &DfLyapunov, n: usize, seed: u64) -> Vec<State> {
    let x1h = lyap.equilibrium().point.s;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| State::new(rng.gen_range(0.0..3.0 * x1h), rng.gen_range(0.0..3.0 * x1h), rng.gen_range(0.0..3.0 * x1h)))
        .collect()
}

/// Random initial states in Ḡ for the endemic function.
pub fn en_random_starts(lyap: &EnLyapunov, n: usize, seed: u64) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eq = lyap.equilibrium();
    sample_endemic_sublevel(lyap, n, &mut rng).iter().map(|d| eq.state(d)).collect()
}

/// Dini checks and final-distance checks along trajectories with ũ = 0.
pub fn check_trajectories<L: IssLyapunov>(
    lyap: &L,
    starts: &[State],
    spec: DecaySpec,
    opts: &CertifyOptions,
    final_tol: f64,
) -> Result<Vec<CheckResult>> {
    let p = lyap.model();
    let eq = lyap.equilibrium();
    let t_end = opts.horizon(p);
    let sig = InputSignal::constant(p.b_hat);
    let mut dini = MarginTracker::new("dini_along_trajectories", TOL_FD);
    let mut strict = MarginTracker::new("strict_decrease", 0.0);
    let mut fin = MarginTracker::new("final_distance", 0.0);
    for x0 in starts {
        let traj = integrate(p, *x0, &sig, t_end, opts.dt)?;
        let d = check_dini_along_trajectory(lyap, &traj, spec, opts.v_floor)?;
        if d.samples > 0 {
            dini.observe(d.worst_margin, Location::State(*x0));
        }
        let s = check_strict_decrease(lyap, &traj, opts.v_floor)?;
        if s.samples > 0 {
            strict.observe(s.worst_margin, Location::State(*x0));
        }
        let dev = eq.deviation(&traj.last_state());
        fin.observe(final_tol - dev.norm(), Location::State(*x0));
    }
    Ok(alloc::vec![dini.finish(), strict.finish(), fin.finish()])
}

/// Full suite for the disease-free function.
pub fn certify_disease_free(lyap: &DfLyapunov, opts: &CertifyOptions) -> Result<VerificationReport> {
    let p = *lyap.model();
    let mut rep = VerificationReport::default();
    rep.push(check_df_positive_definite(lyap, opts.boundary_samples, opts.seed));
    rep.push(check_df_continuity(lyap, opts.boundary_samples, opts.seed ^ 1));
    let b = p.b_hat;
    rep.push(check_df_grid_implication(lyap, opts.grid_n, &[-b, -0.5 * b, 0.0, b, 10.0 * b]));
    let starts = df_random_starts(lyap, opts.trajectories, opts.seed ^ 2);
    rep.extend(check_trajectories(
        lyap,
        &starts,
        DecaySpec::Exponential { rate: lyap.decay_rate() },
        opts,
        1e-3,
    )?);
    let t_end = opts.horizon(&p);
    let mut iss = MarginTracker::new("iss_bound_steps", 1e-6);
    for f in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
        let u = f * b / 10.0;
        let env = iss_envelope(lyap, lyap.equilibrium().point, &InputSignal::constant(b + u), t_end, opts.dt)?;
        iss.observe(env.gain.map_or(f64::NEG_INFINITY, |g| g * (1.0 + 1e-3) - env.limsup), Location::Input(u));
    }
    rep.push(iss.finish());
    Ok(rep)
}

fn rel_gap(a: f64, b: f64) -> f64 {
    abs(a - b) / a.abs().max(b.abs()).max(1.0)
}

/// Agreement of one-sided formulas at the five internal boundaries.
pub fn check_en_continuity(lyap: &EnLyapunov, n: usize, seed: u64) -> Vec<CheckResult> {
    let lp = *lyap.params();
    let eq = lyap.equilibrium().point;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x2_top = lp.l_bar / lp.lambda0();
    let k = lp.k;
    let mut trackers = [
        MarginTracker::new("en_continuity_AB", 0.0),
        MarginTracker::new("en_continuity_BC", 0.0),
        MarginTracker::new("en_continuity_DE", 0.0),
        MarginTracker::new("en_continuity_EF", 0.0),
        MarginTracker::new("en_continuity_x2_zero", 0.0),
    ];
    for _ in 0..n {
        let s = rng.gen_range(0.0..x2_top);
        let at = |x1: f64, x2: f64| Location::Deviation(Deviation::new(x1, x2, 0.0));
        let gap = rel_gap(lyap.segment_v12(EnRegion::A, -k * s, s), lyap.segment_v12(EnRegion::B, -k * s, s));
        trackers[0].observe(1e-9 - gap, at(-k * s, s));
        let nu = lyap.nu(s);
        let gap = rel_gap(lyap.segment_v12(EnRegion::B, nu, s), lyap.segment_v12(EnRegion::C, nu, s));
        trackers[1].observe(1e-9 - gap, at(nu, s));
        // x̃₂ < 0 down to where P⁻¹(λ₀|x̃₂|) stays within a few L̄.
        let t = -rng.gen_range(0.0..0.9 * eq.i);
        let gap = rel_gap(lyap.segment_v12(EnRegion::D, -k * t, t), lyap.segment_v12(EnRegion::E, -k * t, t));
        trackers[2].observe(1e-9 - gap, at(-k * t, t));
        let e = lyap.theta_inv(-t);
        let gap = rel_gap(lyap.segment_v12(EnRegion::E, e, t), lyap.segment_v12(EnRegion::F, e, t));
        trackers[3].observe(1e-9 - gap, at(e, t));
        let a = rng.gen_range(-0.99 * eq.s..lp.l_bar);
        let (up, down) = if a >= 0.0 { (EnRegion::A, EnRegion::F) } else { (EnRegion::C, EnRegion::D) };
        let gap = rel_gap(lyap.segment_v12(up, a, 0.0), lyap.segment_v12(down, a, 0.0));
        trackers[4].observe(1e-9 - gap, at(a, 0.0));
    }
    trackers.into_iter().map(MarginTracker::finish).collect()
}

/// Sampled decrease with ũ = 0 on Ḡ: ∇V·f < 0 and the region-wise bounds.
/// Also records positive definiteness and Ḡ ⊂ H at the same samples.
pub fn check_en_sampled_decrease(lyap: &EnLyapunov, n: usize, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_endemic_sublevel(lyap, n, &mut rng);
    let mut neg = MarginTracker::new("en_strict_decrease", 0.0);
    let mut bound = MarginTracker::new("en_region_bounds", 1e-10);
    let mut posdef = MarginTracker::new("en_positive_definite", 0.0);
    let mut inclusion = MarginTracker::new("en_sublevel_in_h", 0.0);
    for d in pts {
        let loc = Location::Deviation(d);
        inclusion.observe(if lyap.in_h(&d) { 0.0 } else { -1.0 }, loc);
        let v = lyap.value(&d).unwrap_or(f64::NAN);
        if d.norm() > 0.0 {
            posdef.observe(if v > 0.0 { 0.0 } else { -1.0 }, loc);
        }
        let Ok(lie) = lyap.derivative(&d, 0.0) else { continue };
        let Ok(b) = lyap.region_decay_bound(&d) else { continue };
        let scale = 1.0 + abs(lie) + abs(b);
        neg.observe(if lie < 0.0 { -lie / scale } else { -1.0 - lie / scale }, loc);
        bound.observe((b - lie) / scale, loc);
    }
    alloc::vec![neg.finish(), bound.finish(), posdef.finish(), inclusion.finish()]
}

/// ISS implication with the η-based input thresholds at sampled points of
/// Ḡ: A/F if ũ ≤ δμV/λ₁; C/D if ũ ≥ -δμη(V)/λ₁; B and E for every ũ.
pub fn check_en_iss_implication(lyap: &EnLyapunov, n: usize, inputs: &[f64], seed: u64) -> CheckResult {
    let lp = *lyap.params();
    let p = *lyap.model();
    let mu = p.mu;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_endemic_sublevel(lyap, n, &mut rng);
    // η is non-decreasing, so a left-endpoint table is a lower bound.
    const TABLE: usize = 256;
    let table: Vec<f64> = (0..=TABLE).map(|j| lyap.eta(lp.l_bar * j as f64 / TABLE as f64)).collect();
    let eta_lower = |v: f64| table[((v / lp.l_bar * TABLE as f64) as usize).min(TABLE)];
    let consts = lyap.derived_constants();
    let mut tr = MarginTracker::new("en_iss_implication", 1e-10);
    for d in pts {
        let Ok(g) = lyap.gradient(&d) else { continue };
        let (region, _) = lyap.classify(&d);
        let v = lyap.value(&d).unwrap_or(f64::NAN);
        let x = lyap.equilibrium().state(&d);
        for &u in inputs {
            let lie = dot3(g, p.rhs(&x, p.b_hat + u));
            let rhs = match region {
                EnRegion::A | EnRegion::F => {
                    if u > lp.delta * mu * v / lp.lambda1 {
                        continue;
                    }
                    -(1.0 - lp.delta) * mu * v
                }
                EnRegion::C | EnRegion::D => {
                    if u < -lp.delta * mu * eta_lower(v) / lp.lambda1 {
                        continue;
                    }
                    let s = if region == EnRegion::C {
                        -lp.lambda1 * d.x1 + lp.lambda_hat2 * d.x2
                    } else {
                        -lp.lambda1 * d.x1 - lp.lambda2 * d.x2
                    };
                    -(1.0 - lp.delta) * (lyap.p_inv_deriv(s) * mu * s + lp.lambda3 * mu * abs(d.x3))
                }
                EnRegion::B => -consts.a_b * v,
                EnRegion::E => lyap.region_decay_bound(&d).unwrap_or(f64::NAN),
            };
            let scale = 1.0 + abs(lie) + abs(rhs);
            tr.observe((rhs - lie) / scale, Location::Deviation(d));
        }
    }
    tr.finish()
}

/// Nesting of sublevel sets under a change of constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NestingPair {
    /// 0 ≤ a ≤ b in λ̂₂: Ḡ(b, k, L) ⊂ Ḡ(a, k, L).
    LambdaHat2 { a: f64, b: f64 },
    /// 0 ≤ a ≤ b in k, restricted to x̃₂ ≤ L/λ₂.
    K { a: f64, b: f64 },
}

/// Which form of the k-ordering is sampled. The λ̂₂ ordering is the same
/// in every scope except that `Plane` samples with x̃₃ = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NestingScope {
    /// Ḡ(b, L) ∩ {x̃₂ ≤ L/λ₂} ⊂ Ḡ(a, L) in all three coordinates.
    AsStated,
    /// The same implication restricted to x̃₃ = 0.
    Plane,
    /// Cut set {λ₂x̃₂ + λ₃|x̃₃| ≤ L} in place of {x̃₂ ≤ L/λ₂}.
    ThirdAxisCap,
}

/// Samples the membership implication of a nesting pair on `n` points.
///
/// Both settings share λ₃ = half the smaller of their bounds. For a point
/// x with V_b(x) ≤ L̄ the implication for every L ∈ [0, L̄] reduces to
/// V_a(x) ≤ V_b(x) (λ̂₂ pair) or V_a(x) ≤ max{V_b(x), cut(x)} (k pair),
/// so the margin is the difference normalized by 1 + L̄.
pub fn check_sublevel_nesting(
    p: &ModelParams,
    base: &EnLyapParams,
    pair: NestingPair,
    scope: NestingScope,
    n: usize,
    seed: u64,
) -> Result<CheckResult> {
    let (mut pa, mut pb) = (*base, *base);
    let name = match (pair, scope) {
        (NestingPair::LambdaHat2 { a, b }, _) => {
            pa.lambda_hat2 = a;
            pb.lambda_hat2 = b;
            if scope == NestingScope::Plane {
                "nesting_lambda_hat2_plane"
            } else {
                "nesting_lambda_hat2"
            }
        }
        (NestingPair::K { a, b }, s) => {
            pa.k = a;
            pb.k = b;
            match s {
                NestingScope::AsStated => "nesting_k",
                NestingScope::Plane => "nesting_k_plane",
                NestingScope::ThirdAxisCap => "nesting_k_third_axis_cap",
            }
        }
    };
    let l3 = 0.5
        * crate::lyap_en::lambda3_bound(p, &pa)?.min(crate::lyap_en::lambda3_bound(p, &pb)?);
    pa.lambda3 = l3;
    pb.lambda3 = l3;
    let va = EnLyapunov::new(*p, pa)?;
    let vb = EnLyapunov::new(*p, pb)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = sample_endemic_sublevel(&vb, n, &mut rng);
    if scope == NestingScope::Plane {
        for d in &mut pts {
            d.x3 = 0.0;
        }
    }
    let l_bar = base.l_bar;
    let mut tr = MarginTracker::new(name, 1e-9);
    for d in pts {
        let v_b = vb.value_extended(&d);
        let cap = match (pair, scope) {
            (NestingPair::LambdaHat2 { .. }, _) => v_b,
            (NestingPair::K { .. }, NestingScope::ThirdAxisCap) => v_b.max(pb.lambda2 * d.x2 + l3 * abs(d.x3)),
            (NestingPair::K { .. }, _) => v_b.max(pb.lambda2 * d.x2),
        };
        if cap > l_bar {
            continue;
        }
        let m = if va.in_h(&d) { (cap - va.value_extended(&d)) / (1.0 + l_bar) } else { -1.0 };
        tr.observe(m, Location::Deviation(d));
    }
    Ok(tr.finish())
}

/// The corner condition and the k₀, λ₃ bounds as checks.
pub fn check_en_feasibility(lyap: &EnLyapunov) -> Result<Vec<CheckResult>> {
    let f = lyap.feasibility()?;
    let mut k = MarginTracker::new("k_below_k0", 0.0);
    k.observe(f.k_margin, Location::None);
    let mut l3 = MarginTracker::new("lambda3_below_bound", 0.0);
    l3.observe(f.lambda3_margin, Location::None);
    let c50 = check_condition_50(lyap.model(), lyap.params(), COND50_SAMPLES)?;
    let mut c = MarginTracker::new("condition_50", 0.0);
    c.observe(c50.worst_margin, Location::Level(c50.argmin));
    // Both sides of the corner condition vanish at L = 0.
    let mut origin = MarginTracker::new("condition_50_origin", 1e-12);
    origin.observe(-abs(c50.origin_residual), Location::Level(0.0));
    Ok(alloc::vec![k.finish(), l3.finish(), c.finish(), origin.finish()])
}

/// W = -x̃₁ - x̃₂ + |x̃₃| on T = {x̃₁ ≤ -kx̃₂, x̃₂ ≤ 0}.
pub fn w_function(dev: &Deviation) -> f64 {
    -dev.x1 - dev.x2 + abs(dev.x3)
}

pub fn in_t_region(dev: &Deviation, k: f64) -> bool {
    dev.x2 <= 0.0 && dev.x1 <= -k * dev.x2
}

/// Along trajectories from `starts` with ũ = 0: D⁺W ≤ -μW while in T
/// (discrete form, margins scaled by 1 + W), and entry into Ḡ of `lyap`.
pub fn check_w_region(lyap: &EnLyapunov, starts: &[State], t_end: f64, dt: f64) -> Result<Vec<CheckResult>> {
    let p = *lyap.model();
    let eq = lyap.equilibrium();
    let k = lyap.params().k;
    let sig = InputSignal::constant(p.b_hat);
    let mut decay = MarginTracker::new("w_decay_in_t", TOL_FD);
    let mut entry = MarginTracker::new("w_entry_into_sublevel", 0.0);
    for x0 in starts {
        let traj = integrate(&p, *x0, &sig, t_end, dt)?;
        let mut entered = None;
        for i in 0..traj.len() {
            let d0 = eq.deviation(&traj.states[i]);
            if entered.is_none() && lyap.in_certified_set(&d0) {
                entered = Some(traj.times[i]);
            }
            if i + 1 < traj.len() && in_t_region(&d0, k) {
                let h = traj.times[i + 1] - traj.times[i];
                let w0 = w_function(&d0);
                let w1 = w_function(&eq.deviation(&traj.states[i + 1]));
                let allowed = w0 * (exp(-p.mu * h) - 1.0) / h;
                decay.observe((allowed - (w1 - w0) / h) / (1.0 + w0), Location::Time(traj.times[i]));
            }
        }
        entry.observe(if entered.is_some() { 0.0 } else { -1.0 }, Location::State(*x0));
    }
    Ok(alloc::vec![decay.finish(), entry.finish()])
}

/// Points of the separability argument and the sign each forces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityWitness {
    pub state: State,
    pub x1_dot: f64,
    pub x2_dot: f64,
    pub x3_dot: f64,
    /// Sign of ∂V/∂x̃₁ at x̃₁ = 0 needed for ∇V·f < 0.
    pub required_sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityDemo {
    pub check: CheckResult,
    pub upper: Vec<SeparabilityWitness>,
    pub lower: Vec<SeparabilityWitness>,
    /// Flow at x₁ = x̂₁, x₂ = x̂₂ (vanishes).
    pub at_equilibrium: [f64; 3],
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// At x₁ = x̂₁ the infected equation is stationary and ẋ₁ has the sign
/// of x̂₂ - x₂. For a separable V with ∂V/∂x̃₃ ≥ 0 above x̂₃ and ≤ 0 below,
/// the x̃₃ term cannot help when ẋ₃ has the same sign as x̃₃, so
/// ∂V/∂x̃₁(0) must oppose ẋ₁. Points above and below x̂₂ force opposite
/// signs.
pub fn separability_obstruction_demo(p: &ModelParams) -> Result<SeparabilityDemo> {
    let eq = p.endemic_eq()?.point;
    let ratio = p.gamma / p.mu;
    let witness = |x2: f64, x3: f64| {
        let st = State::new(eq.s, x2, x3);
        let f = p.rhs(&st, p.b_hat);
        SeparabilityWitness {
            state: st,
            x1_dot: f[0],
            x2_dot: f[1],
            x3_dot: f[2],
            required_sign: -sign(f[0]),
        }
    };
    let mut tr = MarginTracker::new("separability_obstruction", 0.0);
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for j in 0..8 {
        let off = 0.5 * pow(10.0, -(j as f64));
        // x₂ > x̂₂ and x̂₃ < x₃ ≤ (γ/μ)x₂.
        let x2 = eq.i * (1.0 + off);
        let w = witness(x2, 0.5 * (eq.r + ratio * x2));
        let hyp = eq.r < w.state.r && w.state.r <= ratio * x2 && w.x3_dot >= 0.0;
        let scale = 1.0 + abs(w.x1_dot) + abs(p.b_hat);
        tr.observe(
            if hyp && w.required_sign > 0 && abs(w.x2_dot) <= 1e-12 * scale { 0.0 } else { -1.0 },
            Location::State(w.state),
        );
        upper.push(w);
        // x₂ < x̂₂ and (γ/μ)x₂ ≤ x₃ < x̂₃.
        let x2 = eq.i * (1.0 - off);
        let w = witness(x2, 0.5 * (eq.r + ratio * x2));
        let hyp = ratio * x2 <= w.state.r && w.state.r < eq.r && w.x3_dot <= 0.0;
        tr.observe(
            if hyp && w.required_sign < 0 && abs(w.x2_dot) <= 1e-12 * scale { 0.0 } else { -1.0 },
            Location::State(w.state),
        );
        lower.push(w);
    }
    Ok(SeparabilityDemo {
        check: tr.finish(),
        upper,
        lower,
        at_equilibrium: p.rhs(&eq, p.b_hat),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProhibitedDemo {
    pub checks: Vec<CheckResult>,
    pub start: State,
    /// Closest approach to x_f along the trajectory.
    pub min_distance_to_xf: f64,
    pub final_distance_to_xe: f64,
    pub l_bars_tried: Vec<f64>,
}

/// Trajectory from a start close to the S-axis with x₁ < x̂₁: x₂ falls
/// while x₁ < x̂₁, the path passes near x_f before reaching x_e, and the
/// start lies outside Ḡ for every L̄ tried.
pub fn prohibited_region_demo(p: &ModelParams, start: State, l_bars: &[f64], t_end: f64, dt: f64) -> Result<ProhibitedDemo> {
    let xe = p.endemic_eq()?;
    let xf = p.disease_free_eq().point;
    if !(start.s < xe.point.s && start.i > 0.0) {
        return Err(Error::InvalidParams(format!("start {start:?} needs 0 < x2 and x1 < x1_hat")));
    }
    let traj = integrate(p, start, &InputSignal::constant(p.b_hat), t_end, dt)?;
    let mut falling = MarginTracker::new("prohibited_x2_falls", 0.0);
    let mut min_xf = f64::INFINITY;
    for x in &traj.states {
        min_xf = min_xf.min(dist(x, &xf));
        if x.s < xe.point.s && x.i > 0.0 {
            let f = p.rhs(x, p.b_hat);
            falling.observe(if f[1] < 0.0 { 0.0 } else { -1.0 }, Location::State(*x));
        }
    }
    // On the axis x₂ = 0 the infected equation is stationary and S grows.
    let mut axis = MarginTracker::new("prohibited_axis_flow", 0.0);
    let on_axis = State::new(start.s, 0.0, start.r);
    let f = p.rhs(&on_axis, p.b_hat);
    axis.observe(if f[1] == 0.0 && f[0] > 0.0 { 0.0 } else { -1.0 }, Location::State(on_axis));
    let mut outside = MarginTracker::new("prohibited_start_outside_sublevel", 0.0);
    let dev = xe.deviation(&start);
    for &l in l_bars {
        let lyap = EnLyapunov::select(*p, crate::lyap_en::EnTarget::LBar { l_bar: l })?;
        outside.observe(if lyap.in_certified_set(&dev) { -1.0 } else { 0.0 }, Location::Level(l));
    }
    let final_dist = dist(&traj.last_state(), &xe.point);
    Ok(ProhibitedDemo {
        checks: alloc::vec![falling.finish(), axis.finish(), outside.finish()],
        start,
        min_distance_to_xf: min_xf,
        final_distance_to_xe: final_dist,
        l_bars_tried: l_bars.to_vec(),
    })
}

/// Full suite for the endemic function.
pub fn certify_endemic(lyap: &EnLyapunov, opts: &CertifyOptions) -> Result<VerificationReport> {
    let p = *lyap.model();
    let lp = *lyap.params();
    let mut rep = VerificationReport::default();
    rep.extend(check_en_feasibility(lyap)?);
    rep.extend(check_en_continuity(lyap, opts.boundary_samples, opts.seed ^ 1));
    rep.extend(check_en_sampled_decrease(lyap, opts.samples, opts.seed ^ 3));
    let (lo, hi) = lyap.input_range();
    rep.push(check_en_iss_implication(
        lyap,
        (opts.samples / 20).max(100),
        &[0.5 * lo, 0.1 * lo, 0.1 * hi, 0.5 * hi, 0.99 * hi],
        opts.seed ^ 4,
    ));
    rep.push(check_sublevel_nesting(
        &p,
        &lp,
        NestingPair::LambdaHat2 {
            a: 0.5 * lp.lambda_hat2,
            b: lp.lambda_hat2,
        },
        NestingScope::AsStated,
        opts.samples / 10,
        opts.seed ^ 5,
    )?);
    let starts = en_random_starts(lyap, opts.trajectories, opts.seed ^ 2);
    rep.extend(check_trajectories(lyap, &starts, DecaySpec::NonIncreasing, opts, 1e-2)?);
    let t_end = opts.horizon(&p);
    let eq = lyap.equilibrium().point;
    let mut iss = MarginTracker::new("iss_bound_constant", 1e-6);
    let mut inv = MarginTracker::new("forward_invariance", 0.0);
    // The η-threshold exists only for |ũ| < δμη(L̄)/λ₁.
    let u_eta = lp.delta * p.mu * lyap.eta(lp.l_bar) / lp.lambda1;
    for u in [-0.9 * u_eta, 0.5 * u_eta, 0.9 * u_eta] {
        let env = iss_envelope(lyap, eq, &InputSignal::constant(p.b_hat + u), t_end, opts.dt)?;
        iss.observe(env.gain.map_or(f64::NEG_INFINITY, |g| g * (1.0 + 1e-3) - env.limsup), Location::Input(u));
    }
    for u in [0.9 * lo, 0.5 * lo, 0.5 * hi, 0.9 * hi] {
        let sig = InputSignal::constant(p.b_hat + u);
        for x0 in core::iter::once(&eq).chain(starts.iter().take(5)) {
            let env = iss_envelope(lyap, *x0, &sig, t_end, opts.dt)?;
            inv.observe(if env.stayed_in_set { 0.0 } else { -1.0 }, Location::State(*x0));
        }
    }
    rep.push(iss.finish());
    rep.push(inv.finish());
    Ok(rep)
}
