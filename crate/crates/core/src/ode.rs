//! Fixed-step RK4 integration of the SIR system under time-varying
//! newborn-rate inputs.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::{abs, ceil, norm3, sin};
use crate::model::{ModelParams, State};
use crate::{Error, Result};

/// Default integration step (time units).
pub const DEFAULT_DT: f64 = 0.01;

/// Newborn/immigration rate B(t) ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSignal {
    Constant {
        value: f64,
    },
    /// `before` on [0, t_switch), `after` from t_switch on.
    Step {
        t_switch: f64,
        before: f64,
        after: f64,
    },
    /// Knots (tᵢ, cᵢ): value cᵢ on [tᵢ, tᵢ₊₁). Before the first knot the
    /// first value applies.
    Piecewise {
        knots: Vec<(f64, f64)>,
    },
    /// max(0, mean + amplitude·sin(ω t)).
    Sinusoid {
        mean: f64,
        amplitude: f64,
        omega: f64,
    },
}

impl InputSignal {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn step(t_switch: f64, before: f64, after: f64) -> Self {
        Self::Step {
            t_switch,
            before,
            after,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let ok = match self {
            Self::Constant { value } => nonneg(*value),
            Self::Step {
                t_switch,
                before,
                after,
            } => t_switch.is_finite() && nonneg(*before) && nonneg(*after),
            Self::Piecewise { knots } => {
                !knots.is_empty()
                    && knots.iter().all(|&(t, c)| t.is_finite() && nonneg(c))
                    && knots.windows(2).all(|w| w[0].0 < w[1].0)
            }
            Self::Sinusoid {
                mean,
                amplitude,
                omega,
            } => mean.is_finite() && amplitude.is_finite() && omega.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("invalid input signal {self:?}")))
        }
    }

    /// B(t).
    pub fn sample(&self, t: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Step {
                t_switch,
                before,
                after,
            } => {
                if t < *t_switch {
                    *before
                } else {
                    *after
                }
            }
            Self::Piecewise { knots } => {
                let idx = knots.partition_point(|&(tk, _)| tk <= t);
                knots[idx.saturating_sub(1)].1
            }
            Self::Sinusoid {
                mean,
                amplitude,
                omega,
            } => (mean + amplitude * sin(omega * t)).max(0.0),
        }
    }

    /// lim_{s→t⁻} B(s). Differs from [`sample`](Self::sample) only at jumps.
    pub fn sample_left(&self, t: f64) -> f64 {
        match self {
            Self::Step {
                t_switch,
                before,
                after,
            } => {
                if t <= *t_switch {
                    *before
                } else {
                    *after
                }
            }
            Self::Piecewise { knots } => {
                let idx = knots.partition_point(|&(tk, _)| tk < t);
                knots[idx.saturating_sub(1)].1
            }
            _ => self.sample(t),
        }
    }

    /// Discontinuity times inside (0, t_end).
    pub fn breakpoints(&self, t_end: f64) -> Vec<f64> {
        let inside = |t: f64| t > 0.0 && t < t_end;
        match self {
            Self::Step { t_switch, .. } if inside(*t_switch) => alloc::vec![*t_switch],
            Self::Piecewise { knots } => knots
                .iter()
                .map(|&(t, _)| t)
                .filter(|&t| inside(t))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// sup over [0, t_end] of |B(t) - b_hat|, on the breakpoints and a fine grid.
    pub fn sup_deviation(&self, b_hat: f64, t_end: f64) -> f64 {
        match self {
            Self::Constant { value } => abs(value - b_hat),
            Self::Step {
                t_switch,
                before,
                after,
            } => {
                let a = if *t_switch > 0.0 { abs(before - b_hat) } else { 0.0 };
                let b = if *t_switch <= t_end { abs(after - b_hat) } else { 0.0 };
                a.max(b)
            }
            Self::Piecewise { knots } => {
                let mut m = abs(self.sample(0.0) - b_hat);
                for &(t, c) in knots {
                    if t <= t_end {
                        m = m.max(abs(c - b_hat));
                    }
                }
                m
            }
            Self::Sinusoid {
                mean, amplitude, ..
            } => {
                let hi = mean + abs(*amplitude);
                let lo = (mean - abs(*amplitude)).max(0.0);
                abs(hi - b_hat).max(abs(lo - b_hat))
            }
        }
    }
}

/// Recorded solution of the SIR system.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Parameters the trajectory was integrated with.
    pub params: ModelParams,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// B at each recorded time.
    pub inputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> State {
        *self.states.last().expect("trajectory has at least one point")
    }
}

fn axpy(x: [f64; 3], a: f64, k: [f64; 3]) -> State {
    State::new(x[0] + a * k[0], x[1] + a * k[1], x[2] + a * k[2])
}

fn rk4_step(p: &ModelParams, x: &State, h: f64, b0: f64, b_mid: f64, b1: f64) -> State {
    let xa = x.to_array();
    let k1 = p.rhs(x, b0);
    let k2 = p.rhs(&axpy(xa, 0.5 * h, k1), b_mid);
    let k3 = p.rhs(&axpy(xa, 0.5 * h, k2), b_mid);
    let k4 = p.rhs(&axpy(xa, h, k3), b1);
    State::new(
        xa[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        xa[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        xa[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )
}

/// Clamp roundoff negativity; reject anything larger.
fn sanitize(mut x: State, t: f64) -> Result<State> {
    let a = x.to_array();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t });
    }
    let floor = 1e-12 * x.total().max(1.0);
    let mut out = a;
    for (c, v) in out.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v > -floor {
                *v = 0.0;
            } else {
                return Err(Error::NegativeState {
                    t,
                    component: c,
                    value: *v,
                });
            }
        }
    }
    x = State::from_array(out);
    Ok(x)
}

fn check_request(x0: &State, t_end: f64, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::InvalidStep(format!("t_end must be nonnegative, got {t_end}")));
    }
    if !x0.is_nonnegative() || x0.to_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("initial state {x0:?} must be nonnegative")));
    }
    Ok(())
}

/// Integrates and hands every accepted point `(t, x, B(t))` to `visit`,
/// starting with the initial condition. Returning `false` from `visit`
/// stops early. Step inputs are resolved by aligning the grid with their
/// switch times, so each segment is integrated with a continuous input.
pub fn integrate_with<F>(
    p: &ModelParams,
    x0: State,
    sig: &InputSignal,
    t_end: f64,
    dt: f64,
    mut visit: F,
) -> Result<State>
where
    F: FnMut(f64, &State, f64) -> bool,
{
    check_request(&x0, t_end, dt)?;
    sig.validate()?;

    let mut x = x0;
    if !visit(0.0, &x, sig.sample(0.0)) {
        return Ok(x);
    }

    let mut edges = sig.breakpoints(t_end);
    edges.push(t_end);
    let mut seg_start = 0.0;
    for &seg_end in &edges {
        let len = seg_end - seg_start;
        if len <= 0.0 {
            continue;
        }
        let n = (ceil(len / dt - 1e-9) as usize).max(1);
        let h = len / n as f64;
        for j in 0..n {
            let t0 = seg_start + j as f64 * h;
            let t1 = if j + 1 == n { seg_end } else { seg_start + (j + 1) as f64 * h };
            let b0 = if j == 0 { sig.sample(t0) } else { sig.sample_left(t0) };
            let b_mid = sig.sample(0.5 * (t0 + t1));
            let b1 = sig.sample_left(t1);
            x = sanitize(rk4_step(p, &x, t1 - t0, b0, b_mid, b1), t1)?;
            if !visit(t1, &x, sig.sample(t1)) {
                return Ok(x);
            }
        }
        seg_start = seg_end;
    }
    Ok(x)
}

/// Classical RK4 trajectory on [0, t_end] with step ≤ `dt`.
pub fn integrate(
    p: &ModelParams,
    x0: State,
    sig: &InputSignal,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    check_request(&x0, t_end, dt)?;
    let cap = (t_end / dt) as usize + 2;
    let mut traj = Trajectory {
        params: *p,
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        inputs: Vec::with_capacity(cap),
    };
    integrate_with(p, x0, sig, t_end, dt, |t, x, b| {
        traj.times.push(t);
        traj.states.push(*x);
        traj.inputs.push(b);
        true
    })?;
    Ok(traj)
}

/// Options for [`steady_state`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    /// Residual tolerance: stop when ‖f‖ < tol·(1 + ‖x‖).
    pub tol: f64,
    pub t_max: f64,
    pub dt: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            t_max: 1e5,
            dt: DEFAULT_DT,
        }
    }
}

/// Integrates with constant input `c` until the residual criterion holds.
pub fn steady_state(p: &ModelParams, c: f64, x0: State, opts: SteadyStateOptions) -> Result<State> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidStep(format!("tol must be positive, got {}", opts.tol)));
    }
    let sig = InputSignal::constant(c);
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let last = integrate_with(p, x0, &sig, opts.t_max, opts.dt, |_, x, b| {
        residual = norm3(p.rhs(x, b)) / (1.0 + norm3(x.to_array()));
        converged = residual < opts.tol;
        !converged
    })?;
    if converged {
        Ok(last)
    } else {
        Err(Error::NotConverged {
            t_max: opts.t_max,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;

    fn df() -> ModelParams {
        ModelParams::new(0.0002, 0.032, 0.015, 3.0).unwrap()
    }

    fn en() -> ModelParams {
        df().with_b_hat(17.0)
    }

    fn dist(a: &State, b: &State) -> f64 {
        norm3([a.s - b.s, a.i - b.i, a.r - b.r])
    }

    #[test]
    fn signal_samples() {
        assert_eq!(InputSignal::constant(3.0).sample(10.0), 3.0);
        let s = InputSignal::step(5.0, 3.0, 17.0);
        assert_eq!(s.sample(4.9), 3.0);
        assert_eq!(s.sample(5.0), 17.0);
        assert_eq!(s.sample_left(5.0), 3.0);
        let sin = InputSignal::Sinusoid {
            mean: 1.0,
            amplitude: 2.0,
            omega: 1.0,
        };
        assert_eq!(sin.sample(1.5 * PI), 0.0);
        let pw = InputSignal::Piecewise {
            knots: alloc::vec![(0.0, 1.0), (2.0, 4.0), (5.0, 0.5)],
        };
        assert_eq!(pw.sample(1.0), 1.0);
        assert_eq!(pw.sample(2.0), 4.0);
        assert_eq!(pw.sample_left(2.0), 1.0);
        assert_eq!(pw.sample(7.0), 0.5);
        assert_eq!(pw.breakpoints(4.0), alloc::vec![2.0]);
    }

    #[test]
    fn signal_json_is_tagged() {
        let s: InputSignal =
            serde_json::from_str(r#"{"kind":"step","t_switch":5,"before":3,"after":17}"#).unwrap();
        assert_eq!(s, InputSignal::step(5.0, 3.0, 17.0));
    }

    #[test]
    fn equilibrium_is_fixed() {
        let p = df();
        let x0 = p.disease_free_eq().point;
        let tr = integrate(&p, x0, &InputSignal::constant(3.0), 100.0, DEFAULT_DT).unwrap();
        for x in &tr.states {
            assert!(dist(x, &x0) <= 1e-9 * x0.s);
        }
        assert_relative_eq!(*tr.times.last().unwrap(), 100.0);
    }

    #[test]
    fn converges_to_disease_free() {
        let p = df();
        let tr = integrate(&p, State::new(100.0, 50.0, 0.0), &InputSignal::constant(3.0), 5000.0, DEFAULT_DT)
            .unwrap();
        assert!(dist(&tr.last_state(), &p.disease_free_eq().point) < 1e-3);
    }

    #[test]
    fn converges_to_endemic() {
        let p = en();
        let last = integrate_with(&p, State::new(400.0, 100.0, 100.0), &InputSignal::constant(17.0), 5000.0, DEFAULT_DT, |_, _, _| true)
            .unwrap();
        assert!(dist(&last, &p.endemic_eq().unwrap().point) < 1e-2);
    }

    #[test]
    fn step_switch_is_on_grid() {
        let tr = integrate(&df(), State::new(100.0, 50.0, 0.0), &InputSignal::step(0.333, 3.0, 17.0), 1.0, 0.1).unwrap();
        assert!(tr.times.contains(&0.333));
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*tr.times.last().unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_requests() {
        let p = df();
        let x = State::new(1.0, 1.0, 1.0);
        let c = InputSignal::constant(1.0);
        assert!(integrate(&p, x, &c, 1.0, 0.0).is_err());
        assert!(integrate(&p, x, &c, -1.0, 0.1).is_err());
        assert!(integrate(&p, State::new(-1.0, 0.0, 0.0), &c, 1.0, 0.1).is_err());
        // A hopelessly large step blows up instead of clamping silently.
        let r = integrate(&p, State::new(1e6, 1e6, 0.0), &c, 100.0, 50.0);
        assert!(matches!(r, Err(Error::NegativeState { .. }) | Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn zero_horizon() {
        let tr = integrate(&df(), State::new(1.0, 2.0, 3.0), &InputSignal::constant(1.0), 0.0, 0.1).unwrap();
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn steady_states() {
        let opts = SteadyStateOptions {
            tol: 1e-12,
            t_max: 1e5,
            dt: 0.1,
        };
        let p = en();
        let xe = p.endemic_eq().unwrap().point;
        let ss = steady_state(&p, 17.0, State::new(300.0, 200.0, 500.0), opts).unwrap();
        assert!(dist(&ss, &xe) < 1e-6 * xe.total());

        let ss = steady_state(&p, 0.0, State::new(300.0, 200.0, 500.0), SteadyStateOptions { tol: 1e-9, ..opts }).unwrap();
        assert!(norm3(ss.to_array()) < 1e-6);

        let c = 0.5 * p.critical_b_hat();
        let ss = steady_state(&p, c, State::new(10.0, 20.0, 0.0), opts).unwrap();
        assert!(dist(&ss, &State::new(c / p.mu, 0.0, 0.0)) < 1e-6 * c / p.mu);

        let short = SteadyStateOptions { t_max: 1.0, ..opts };
        assert!(matches!(steady_state(&p, 17.0, State::new(300.0, 200.0, 500.0), short), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn fourth_order_convergence() {
        let p = en();
        let x0 = State::new(400.0, 100.0, 100.0);
        let sig = InputSignal::Sinusoid {
            mean: 17.0,
            amplitude: 3.0,
            omega: 0.3,
        };
        let run = |dt: f64| integrate_with(&p, x0, &sig, 20.0, dt, |_, _, _| true).unwrap();
        let reference = run(0.5 / 8.0);
        let e1 = dist(&run(0.5), &reference);
        let e2 = dist(&run(0.25), &reference);
        let ratio = e1 / e2;
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }
}
