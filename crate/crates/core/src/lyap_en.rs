//! ISS Lyapunov function for the endemic equilibrium (R̂₀ > γ/μ + 2).
//!
//! Ṽ = Ṽ₁₂(x̃₁, x̃₂) + λ₃|x̃₃| where Ṽ₁₂ is defined on six regions:
//!
//! ```text
//! A  x̃₂ ≥ 0, x̃₁ ≥ -kx̃₂                 λ₁x̃₁ + λ₂x̃₂
//! B  x̃₂ ≥ 0, ν(x̃₂) ≤ x̃₁ < -kx̃₂         λ₀x̃₂
//! C  x̃₂ ≥ 0, x̃₁ < ν(x̃₂)                P⁻¹(-λ₁x̃₁ + λ̂₂x̃₂)
//! D  x̃₂ < 0, x̃₁ ≤ -kx̃₂                 P⁻¹(-λ₁x̃₁ - λ₂x̃₂)
//! E  x̃₂ < 0, -kx̃₂ < x̃₁ ≤ θ⁻¹(-x̃₂)     P⁻¹(-λ₀x̃₂)
//! F  x̃₂ < 0, x̃₁ > θ⁻¹(-x̃₂)            λ₁x̃₁ - λ̂₂x̃₂
//! ```
//!
//! with λ₀ = λ₂ - kλ₁ and
//!
//! ```text
//! θ(s)   = x̂₂ s / (x̂₁ + s)            s > -x̂₁
//! ω(s)   = λ₁s + λ̂₂θ(s)
//! P(s)   = λ₀ θ(ω⁻¹(s))
//! P⁻¹(s) = λ₁θ⁻¹(s/λ₀) + λ̂₂s/λ₀       s < λ₀x̂₂
//! ν(s)   = (λ̂₂s - P(λ₀s)) / λ₁
//! ```

use alloc::format;
use alloc::string::String;
use serde::{Deserialize, Serialize};

use crate::lyap::{boundary_band, IssLyapunov};
use crate::math::{abs, sqrt};
use crate::model::{Deviation, Equilibrium, ModelParams, Regime};
use crate::{Error, Result};

/// Default number of intervals when sampling the corner condition on [0, L̄].
pub const COND50_SAMPLES: usize = 2048;

const SHRINK_ITERATIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnLyapParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_hat2: f64,
    pub k: f64,
    pub lambda3: f64,
    pub l_bar: f64,
    pub delta: f64,
}

impl EnLyapParams {
    /// λ₀ = λ₂ - kλ₁.
    pub fn lambda0(&self) -> f64 {
        self.lambda2 - self.k * self.lambda1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnRegion {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl EnRegion {
    pub const ALL: [EnRegion; 6] = [Self::A, Self::B, Self::C, Self::D, Self::E, Self::F];

    pub fn letter(self) -> char {
        match self {
            Self::A => 'A',
            Self::B => 'B',
            Self::C => 'C',
            Self::D => 'D',
            Self::E => 'E',
            Self::F => 'F',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X3Sign {
    NonNeg,
    Neg,
}

/// Constants appearing in the region-wise decrease estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnDerivedConstants {
    pub gamma_a: f64,
    pub gamma_c: f64,
    pub gamma_d: f64,
    pub gamma_e: f64,
    pub gamma_f: f64,
    pub a_b: f64,
    /// Lower bound x̂₂ - θ(ω⁻¹(L̄)) on x₂ over region E ∩ Ḡ.
    pub x2_floor: f64,
}

/// What [`select_en_params`] must achieve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnTarget {
    /// A prescribed sublevel L̄.
    LBar { l_bar: f64 },
    /// A box of deviations [lo, hi] that must lie in Ḡ.
    Box { lo: [f64; 3], hi: [f64; 3] },
}

/// Outcome of sampling the corner condition ν(L/λ₀) ≤ θ⁻¹(-L/λ₀).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cond50 {
    pub holds: bool,
    /// Minimum of θ⁻¹(-L/λ₀) - ν(L/λ₀) over the samples with L > 0.
    pub worst_margin: f64,
    pub argmin: f64,
    /// Residual of the L = 0 endpoint, where both sides vanish identically.
    pub origin_residual: f64,
}

/// Feasibility summary of a parameter choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnFeasibility {
    pub k0: f64,
    pub k_margin: f64,
    pub lambda3_bound: f64,
    pub lambda3_terms: [f64; 4],
    pub lambda3_margin: f64,
    pub cond50_margin: f64,
    pub cond50_argmin: f64,
    pub input_range: (f64, f64),
}

/// Scalar helper functions for fixed (x̂, λ₁, λ₂, λ̂₂, k).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Shape {
    x1h: f64,
    x2h: f64,
    l1: f64,
    l2: f64,
    lh2: f64,
    k: f64,
    l0: f64,
}

impl Shape {
    fn new(eq: &Equilibrium, lp: &EnLyapParams) -> Self {
        Self {
            x1h: eq.point.s,
            x2h: eq.point.i,
            l1: lp.lambda1,
            l2: lp.lambda2,
            lh2: lp.lambda_hat2,
            k: lp.k,
            l0: lp.lambda0(),
        }
    }

    fn theta(&self, s: f64) -> f64 {
        self.x2h * s / (self.x1h + s)
    }

    fn theta_deriv(&self, s: f64) -> f64 {
        let d = self.x1h + s;
        self.x1h * self.x2h / (d * d)
    }

    fn theta_inv(&self, s: f64) -> f64 {
        self.x1h * s / (self.x2h - s)
    }

    fn theta_inv_deriv(&self, s: f64) -> f64 {
        let d = self.x2h - s;
        self.x1h * self.x2h / (d * d)
    }

    fn omega(&self, s: f64) -> f64 {
        self.l1 * s + self.lh2 * self.theta(s)
    }

    fn omega_deriv(&self, s: f64) -> f64 {
        self.l1 + self.lh2 * self.theta_deriv(s)
    }

    /// Bracketed Newton iteration; ω is increasing and concave, so Newton
    /// steps from the left stay left of the root.
    fn omega_inv(&self, v: f64) -> f64 {
        if v == 0.0 || self.lh2 == 0.0 {
            return v / self.l1;
        }
        let (mut lo, mut hi) = if v > 0.0 {
            (((v - self.lh2 * self.x2h) / self.l1).max(0.0), v / self.l1)
        } else {
            (self.theta_inv(v / self.lh2).max(v / self.l1), 0.0)
        };
        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.omega(s) - v;
            if f == 0.0 {
                return s;
            }
            if f < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let mut next = s - f / self.omega_deriv(s);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let scale = abs(next).max(abs(s));
            if abs(next - s) <= 2.0 * f64::EPSILON * scale || hi - lo <= 2.0 * f64::EPSILON * abs(lo).max(abs(hi)) {
                return next;
            }
            s = next;
        }
        s
    }

    fn p(&self, s: f64) -> f64 {
        self.l0 * self.theta(self.omega_inv(s))
    }

    /// P⁻¹, `+∞` at or beyond the pole λ₀x̂₂.
    fn p_inv(&self, s: f64) -> f64 {
        if s >= self.l0 * self.x2h {
            return f64::INFINITY;
        }
        self.l1 * self.theta_inv(s / self.l0) + self.lh2 * s / self.l0
    }

    fn p_inv_deriv(&self, s: f64) -> f64 {
        if s >= self.l0 * self.x2h {
            return f64::INFINITY;
        }
        let d = self.l0 * self.x2h - s;
        (self.l1 * self.l0 * self.l0 * self.x1h * self.x2h / (d * d) + self.lh2) / self.l0
    }

    /// P′(a) = 1 / (P⁻¹)′(P(a)).
    fn p_deriv(&self, a: f64) -> f64 {
        1.0 / self.p_inv_deriv(self.p(a))
    }

    fn nu(&self, s: f64) -> f64 {
        (self.lh2 * s - self.p(self.l0 * s)) / self.l1
    }

    fn nu_deriv(&self, s: f64) -> f64 {
        (self.lh2 - self.l0 * self.p_deriv(self.l0 * s)) / self.l1
    }

    fn classify(&self, x1: f64, x2: f64) -> EnRegion {
        if x2 >= 0.0 {
            if x1 >= -self.k * x2 {
                EnRegion::A
            } else if x1 >= self.nu(x2) {
                EnRegion::B
            } else {
                EnRegion::C
            }
        } else if x1 <= -self.k * x2 {
            EnRegion::D
        } else if -x2 >= self.x2h || x1 <= self.theta_inv(-x2) {
            EnRegion::E
        } else {
            EnRegion::F
        }
    }

    /// Argument fed to P⁻¹ in regions C, D, E.
    fn p_arg(&self, region: EnRegion, x1: f64, x2: f64) -> f64 {
        match region {
            EnRegion::C => -self.l1 * x1 + self.lh2 * x2,
            EnRegion::D => -self.l1 * x1 - self.l2 * x2,
            EnRegion::E => -self.l0 * x2,
            _ => f64::NAN,
        }
    }

    fn v12(&self, region: EnRegion, x1: f64, x2: f64) -> f64 {
        match region {
            EnRegion::A => self.l1 * x1 + self.l2 * x2,
            EnRegion::B => self.l0 * x2,
            EnRegion::C | EnRegion::D | EnRegion::E => self.p_inv(self.p_arg(region, x1, x2)),
            EnRegion::F => self.l1 * x1 - self.lh2 * x2,
        }
    }

    fn grad12(&self, region: EnRegion, x1: f64, x2: f64) -> [f64; 2] {
        match region {
            EnRegion::A => [self.l1, self.l2],
            EnRegion::B => [0.0, self.l0],
            EnRegion::C => {
                let d = self.p_inv_deriv(self.p_arg(region, x1, x2));
                [-self.l1 * d, self.lh2 * d]
            }
            EnRegion::D => {
                let d = self.p_inv_deriv(self.p_arg(region, x1, x2));
                [-self.l1 * d, -self.l2 * d]
            }
            EnRegion::E => [0.0, -self.l0 * self.p_inv_deriv(self.p_arg(region, x1, x2))],
            EnRegion::F => [self.l1, -self.lh2],
        }
    }

    /// Approximate distance to the nearest internal boundary of Ṽ₁₂.
    fn boundary_distance(&self, x1: f64, x2: f64) -> f64 {
        let k = self.k;
        let mut d = abs(x2).min(abs(x1 + k * x2) / sqrt(1.0 + k * k));
        if x2 >= 0.0 {
            let slope = self.nu_deriv(x2);
            d = d.min(abs(x1 - self.nu(x2)) / sqrt(1.0 + slope * slope));
        } else if -x2 < self.x2h {
            let slope = self.theta_inv_deriv(-x2);
            d = d.min(abs(x1 - self.theta_inv(-x2)) / sqrt(1.0 + slope * slope));
        }
        d
    }

    /// min over V₁₂ + V₃ = l of P(V₁₂) + λ₃V₃P′(V₁₂): coarse scan then
    /// golden-section refinement around the best sample.
    fn eta(&self, lambda3: f64, l: f64) -> f64 {
        if l <= 0.0 {
            return 0.0;
        }
        let g = |a: f64| self.p(a) + lambda3 * (l - a) * self.p_deriv(a);
        const N: usize = 64;
        let mut best = (0usize, g(0.0));
        for j in 1..=N {
            let val = g(l * j as f64 / N as f64);
            if val < best.1 {
                best = (j, val);
            }
        }
        let mut a = l * best.0.saturating_sub(1) as f64 / N as f64;
        let mut b = l * (best.0 + 1).min(N) as f64 / N as f64;
        let ratio = 0.5 * (sqrt(5.0) - 1.0);
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut gc, mut gd) = (g(c), g(d));
        while b - a > 1e-10 * l {
            if gc < gd {
                b = d;
                d = c;
                gd = gc;
                c = b - ratio * (b - a);
                gc = g(c);
            } else {
                a = c;
                c = d;
                gc = gd;
                d = a + ratio * (b - a);
                gd = g(d);
            }
        }
        best.1.min(gc).min(gd)
    }
}

fn endemic_eq_checked(p: &ModelParams) -> Result<Equilibrium> {
    p.validate()?;
    if p.b_hat <= 0.0 || p.classify_regime() != Regime::EndemicTheoremApplies {
        return Err(Error::Regime(format!(
            "endemic construction needs B̂ > 0 and R0 > gamma/mu + 2 = {}, got R0 = {}",
            p.endemic_threshold(),
            p.r0_hat()
        )));
    }
    p.endemic_eq()
}

fn shape(p: &ModelParams, lp: &EnLyapParams) -> Result<Shape> {
    Ok(Shape::new(&p.endemic_eq()?, lp))
}

/// θ(s) = x̂₂ - x̂₁x̂₂/(x̂₁ + s) for s > -x̂₁.
pub fn theta(p: &ModelParams, s: f64) -> Result<f64> {
    let eq = p.endemic_eq()?;
    if !(s > -eq.point.s) {
        return Err(Error::Domain(format!("theta needs s > -x1_hat = {}, got {s}", -eq.point.s)));
    }
    Ok(eq.point.i * s / (eq.point.s + s))
}

/// θ⁻¹(s) = x̂₁x̂₂/(x̂₂ - s) - x̂₁ for s < x̂₂.
pub fn theta_inv(p: &ModelParams, s: f64) -> Result<f64> {
    let eq = p.endemic_eq()?;
    if !(s < eq.point.i) {
        return Err(Error::Domain(format!("theta_inv needs s < x2_hat = {}, got {s}", eq.point.i)));
    }
    Ok(eq.point.s * s / (eq.point.i - s))
}

/// ω(s) = λ₁s + λ̂₂θ(s).
pub fn omega(p: &ModelParams, lp: &EnLyapParams, s: f64) -> Result<f64> {
    Ok(lp.lambda1 * s + lp.lambda_hat2 * theta(p, s)?)
}

pub fn omega_inv(p: &ModelParams, lp: &EnLyapParams, v: f64) -> Result<f64> {
    Ok(shape(p, lp)?.omega_inv(v))
}

pub fn p_fun(p: &ModelParams, lp: &EnLyapParams, s: f64) -> Result<f64> {
    Ok(shape(p, lp)?.p(s))
}

pub fn p_inv(p: &ModelParams, lp: &EnLyapParams, s: f64) -> Result<f64> {
    let sh = shape(p, lp)?;
    if !(s < sh.l0 * sh.x2h) {
        return Err(Error::Domain(format!("P^-1 needs s < {}, got {s}", sh.l0 * sh.x2h)));
    }
    Ok(sh.p_inv(s))
}

/// (P⁻¹)′(s) in closed form.
pub fn p_inv_deriv(p: &ModelParams, lp: &EnLyapParams, s: f64) -> Result<f64> {
    let sh = shape(p, lp)?;
    if !(s < sh.l0 * sh.x2h) {
        return Err(Error::Domain(format!("(P^-1)' needs s < {}, got {s}", sh.l0 * sh.x2h)));
    }
    Ok(sh.p_inv_deriv(s))
}

pub fn nu(p: &ModelParams, lp: &EnLyapParams, s: f64) -> Result<f64> {
    Ok(shape(p, lp)?.nu(s))
}

/// k₀ = min{1 - (γ+μ)/(μ(R̂₀-1)), λ₂θ⁻¹(-L̄/λ₂) / (λ₁θ⁻¹(-L̄/λ₂) - L̄)}.
pub fn k0_bound(p: &ModelParams, lambda1: f64, lambda2: f64, l_bar: f64) -> Result<f64> {
    let eq = endemic_eq_checked(p)?;
    let first = 1.0 - (p.gamma + p.mu) / (p.mu * (p.r0_hat() - 1.0));
    if l_bar <= 0.0 {
        return Ok(first);
    }
    let t = eq.point.s * (-l_bar / lambda2) / (eq.point.i + l_bar / lambda2);
    Ok(first.min(lambda2 * t / (lambda1 * t - l_bar)))
}

/// The four upper bounds on λ₃. The third carries the factor k that the
/// region-E estimate requires.
pub fn lambda3_bound_terms(p: &ModelParams, lp: &EnLyapParams) -> Result<[f64; 4]> {
    let sh = shape(p, lp)?;
    let k = lp.k;
    let x2_floor = sh.x2h - sh.theta(sh.omega_inv(lp.l_bar));
    Ok([
        k * p.mu * lp.lambda1 * (p.r0_hat() - 1.0) * (1.0 - k) / p.gamma,
        lp.lambda_hat2 * lp.lambda_hat2 / ((1.0 - k) * lp.lambda1),
        k * p.beta * lp.lambda_hat2 * x2_floor / p.gamma,
        lp.lambda_hat2,
    ])
}

pub fn lambda3_bound(p: &ModelParams, lp: &EnLyapParams) -> Result<f64> {
    Ok(lambda3_bound_terms(p, lp)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Samples ν(L/λ₀) ≤ θ⁻¹(-L/λ₀) at L = jL̄/n, j = 0..=n.
pub fn check_condition_50(p: &ModelParams, lp: &EnLyapParams, n_samples: usize) -> Result<Cond50> {
    let sh = shape(p, lp)?;
    let n = n_samples.max(1);
    let margin = |l: f64| {
        let s = l / sh.l0;
        sh.theta_inv(-s) - sh.nu(s)
    };
    let mut worst = (f64::INFINITY, lp.l_bar);
    for j in 1..=n {
        let l = if j == n { lp.l_bar } else { lp.l_bar * j as f64 / n as f64 };
        let m = margin(l);
        if !(m >= worst.0) {
            worst = (m, l);
        }
    }
    let origin = margin(0.0);
    Ok(Cond50 {
        holds: worst.0 >= 0.0 && origin >= 0.0,
        worst_margin: worst.0,
        argmin: worst.1,
        origin_residual: origin,
    })
}

impl EnLyapParams {
    /// Checks λ₁ = λ₂, k < k₀, λ₃ below its bound, δ ∈ (0,1) and
    /// the corner condition.
    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        endemic_eq_checked(p)?;
        let bad = |m: String| Err(Error::InfeasibleOverride(m));
        let finite = [self.lambda1, self.lambda2, self.lambda_hat2, self.k, self.lambda3, self.l_bar, self.delta]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return bad(format!("non-finite parameter in {self:?}"));
        }
        if !(self.lambda1 > 0.0) || abs(self.lambda1 - self.lambda2) > 1e-12 * self.lambda1 {
            return bad(format!("need 0 < lambda1 = lambda2, got {} and {}", self.lambda1, self.lambda2));
        }
        if !(self.lambda_hat2 > 0.0) {
            return bad(format!("lambda_hat2 must be positive, got {}", self.lambda_hat2));
        }
        if !(self.l_bar > 0.0) {
            return bad(format!("l_bar must be positive, got {}", self.l_bar));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        let k0 = k0_bound(p, self.lambda1, self.lambda2, self.l_bar)?;
        if !(self.k > 0.0 && self.k < k0) {
            return bad(format!("k must lie in (0, k0 = {k0}), got {}", self.k));
        }
        let bound = lambda3_bound(p, self)?;
        if !(self.lambda3 > 0.0 && self.lambda3 < bound && self.lambda3 < self.lambda2) {
            return bad(format!("lambda3 must lie in (0, {bound}), got {}", self.lambda3));
        }
        let c50 = check_condition_50(p, self, COND50_SAMPLES)?;
        if !c50.holds {
            return bad(format!(
                "corner condition fails: margin {} at L = {}",
                c50.worst_margin, c50.argmin
            ));
        }
        Ok(())
    }
}

fn candidate(p: &ModelParams, lambda_hat2: f64, k: f64, l_bar: f64) -> Result<EnLyapParams> {
    let mut lp = EnLyapParams {
        lambda1: 1.0,
        lambda2: 1.0,
        lambda_hat2,
        k,
        lambda3: 0.0,
        l_bar,
        delta: 0.5,
    };
    lp.lambda3 = 0.5 * lambda3_bound(p, &lp)?;
    Ok(lp)
}

/// Shrinks λ̂₂ (and k, and for box targets grows L̄) until the
/// construction is feasible.
pub fn select_en_params(p: &ModelParams, target: EnTarget) -> Result<EnLyapParams> {
    let eq = endemic_eq_checked(p)?;
    let (mut l_bar, bx) = match target {
        EnTarget::LBar { l_bar } => {
            if !(l_bar > 0.0 && l_bar.is_finite()) {
                return Err(Error::InvalidParams(format!("l_bar must be positive, got {l_bar}")));
            }
            (l_bar, None)
        }
        EnTarget::Box { lo, hi } => {
            if (0..3).any(|i| !(lo[i] <= hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
                return Err(Error::InvalidParams(format!("empty or non-finite box {lo:?}..{hi:?}")));
            }
            let reach = (0..3).map(|i| abs(lo[i]).max(abs(hi[i]))).sum::<f64>();
            (2.0 * reach.max(1e-6), Some((lo, hi)))
        }
    };
    let mut lambda_hat2 = 0.1;
    let mut k = 0.9 * k0_bound(p, 1.0, 1.0, l_bar)?;
    let mut grow = 0usize;
    for _ in 0..SHRINK_ITERATIONS {
        k = k.min(0.9 * k0_bound(p, 1.0, 1.0, l_bar)?);
        let lp = candidate(p, lambda_hat2, k, l_bar)?;
        if !check_condition_50(p, &lp, COND50_SAMPLES)?.holds {
            lambda_hat2 *= 0.5;
            continue;
        }
        let Some((lo, hi)) = bx else {
            lp.validate(p)?;
            return Ok(lp);
        };
        let lyap = EnLyapunov::from_parts(*p, eq, lp);
        if lyap.box_in_sublevel(lo, hi, 8) {
            lp.validate(p)?;
            return Ok(lp);
        }
        match grow % 3 {
            0 => l_bar *= 2.0,
            1 => lambda_hat2 *= 0.5,
            _ => k *= 0.5,
        }
        grow += 1;
    }
    Err(Error::NoConvergence {
        iterations: SHRINK_ITERATIONS,
    })
}

/// The endemic ISS Lyapunov function bound to its model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnLyapunov {
    model: ModelParams,
    eq: Equilibrium,
    params: EnLyapParams,
    shape: Shape,
}

impl EnLyapunov {
    pub fn new(model: ModelParams, params: EnLyapParams) -> Result<Self> {
        params.validate(&model)?;
        Ok(Self::from_parts(model, model.endemic_eq()?, params))
    }

    fn from_parts(model: ModelParams, eq: Equilibrium, params: EnLyapParams) -> Self {
        Self {
            model,
            eq,
            params,
            shape: Shape::new(&eq, &params),
        }
    }

    /// Builds the function without the k₀, λ₃ or corner checks. Only
    /// the regime and λ₀ > 0 are enforced; use for sensitivity studies.
    pub fn new_unchecked(model: ModelParams, params: EnLyapParams) -> Result<Self> {
        let eq = endemic_eq_checked(&model)?;
        if !(params.lambda0() > 0.0 && params.lambda1 > 0.0 && params.lambda_hat2 >= 0.0) {
            return Err(Error::InfeasibleOverride(format!("need lambda2 - k lambda1 > 0, got {params:?}")));
        }
        Ok(Self::from_parts(model, eq, params))
    }

    pub fn select(model: ModelParams, target: EnTarget) -> Result<Self> {
        Self::new(model, select_en_params(&model, target)?)
    }

    pub fn params(&self) -> &EnLyapParams {
        &self.params
    }

    pub fn theta(&self, s: f64) -> f64 {
        self.shape.theta(s)
    }

    pub fn theta_inv(&self, s: f64) -> f64 {
        self.shape.theta_inv(s)
    }

    pub fn omega(&self, s: f64) -> f64 {
        self.shape.omega(s)
    }

    pub fn omega_inv(&self, v: f64) -> f64 {
        self.shape.omega_inv(v)
    }

    pub fn p_fun(&self, s: f64) -> f64 {
        self.shape.p(s)
    }

    /// P⁻¹, `+∞` at or beyond λ₀x̂₂.
    pub fn p_inv(&self, s: f64) -> f64 {
        self.shape.p_inv(s)
    }

    pub fn p_inv_deriv(&self, s: f64) -> f64 {
        self.shape.p_inv_deriv(s)
    }

    pub fn nu(&self, s: f64) -> f64 {
        self.shape.nu(s)
    }

    pub fn derived_constants(&self) -> EnDerivedConstants {
        let lp = &self.params;
        let g = self.model.gamma;
        let l0 = lp.lambda0();
        let x2_floor = self.eq.point.i - self.shape.theta(self.shape.omega_inv(lp.l_bar));
        EnDerivedConstants {
            gamma_a: g * (1.0 - lp.lambda3 / lp.lambda2),
            gamma_c: g * (1.0 - lp.lambda3 * l0 / (lp.lambda_hat2 * lp.lambda_hat2)),
            gamma_d: g * (1.0 - lp.lambda3 * l0 / (lp.lambda2 * lp.lambda_hat2)),
            gamma_e: 1.0 - lp.lambda3 * g / (lp.k * lp.lambda_hat2 * x2_floor * self.model.beta),
            gamma_f: g * (1.0 - lp.lambda3 / lp.lambda_hat2),
            a_b: (lp.k * self.model.mu * (self.model.r0_hat() - 1.0) - lp.lambda3 * g / l0).min(self.model.mu),
            x2_floor,
        }
    }

    pub fn feasibility(&self) -> Result<EnFeasibility> {
        let lp = &self.params;
        let k0 = k0_bound(&self.model, lp.lambda1, lp.lambda2, lp.l_bar)?;
        let terms = lambda3_bound_terms(&self.model, lp)?;
        let bound = terms.into_iter().fold(f64::INFINITY, f64::min);
        let c50 = check_condition_50(&self.model, lp, COND50_SAMPLES)?;
        Ok(EnFeasibility {
            k0,
            k_margin: k0 - lp.k,
            lambda3_bound: bound,
            lambda3_terms: terms,
            lambda3_margin: bound - lp.lambda3,
            cond50_margin: c50.worst_margin,
            cond50_argmin: c50.argmin,
            input_range: self.input_range(),
        })
    }

    pub fn in_h(&self, dev: &Deviation) -> bool {
        let lp = &self.params;
        let x2h = self.eq.point.i;
        let upper = lp.lambda2 * (1.0 - lp.k);
        dev.x2 > -x2h
            && dev.x2 <= lp.l_bar / upper
            && -dev.x1 - dev.x2 < (1.0 - lp.k) * x2h
            && -lp.lambda1 * dev.x1 + lp.lambda_hat2 * dev.x2 < upper * x2h
    }

    pub fn in_sublevel(&self, dev: &Deviation, level: f64) -> bool {
        self.eq.admits(dev) && self.in_h(dev) && self.value_extended(dev) <= level
    }

    fn box_in_sublevel(&self, lo: [f64; 3], hi: [f64; 3], n: usize) -> bool {
        let at = |i: usize, j: usize| lo[i] + (hi[i] - lo[i]) * j as f64 / n as f64;
        (0..=n).all(|a| {
            (0..=n).all(|b| (0..=n).all(|c| self.in_sublevel(&Deviation::new(at(0, a), at(1, b), at(2, c)), self.params.l_bar)))
        })
    }

    fn check_h(&self, dev: &Deviation) -> Result<()> {
        if self.in_h(dev) {
            Ok(())
        } else {
            Err(Error::OutOfH {
                x1: dev.x1,
                x2: dev.x2,
                x3: dev.x3,
            })
        }
    }

    /// Region of `dev` by the case conditions, without checking membership
    /// in H.
    pub fn classify(&self, dev: &Deviation) -> (EnRegion, X3Sign) {
        let sign = if dev.x3 >= 0.0 { X3Sign::NonNeg } else { X3Sign::Neg };
        (self.shape.classify(dev.x1, dev.x2), sign)
    }

    pub fn region(&self, dev: &Deviation) -> Result<(EnRegion, X3Sign)> {
        self.check_h(dev)?;
        Ok(self.classify(dev))
    }

    /// Ṽ₁₂ formula of one region, evaluated wherever it is finite.
    pub fn segment_v12(&self, region: EnRegion, x1: f64, x2: f64) -> f64 {
        self.shape.v12(region, x1, x2)
    }

    pub fn value(&self, dev: &Deviation) -> Result<f64> {
        let (region, _) = self.region(dev)?;
        Ok(self.shape.v12(region, dev.x1, dev.x2) + self.params.lambda3 * abs(dev.x3))
    }

    /// Distance to the nearest region boundary, the x̃₃ = 0 kink included.
    pub fn boundary_distance(&self, dev: &Deviation) -> f64 {
        self.shape.boundary_distance(dev.x1, dev.x2).min(abs(dev.x3))
    }

    pub fn gradient(&self, dev: &Deviation) -> Result<[f64; 3]> {
        let (region, sign) = self.region(dev)?;
        let distance = self.boundary_distance(dev);
        if distance <= boundary_band(dev) {
            return Err(Error::OnBoundary { distance });
        }
        let [g1, g2] = self.shape.grad12(region, dev.x1, dev.x2);
        let g3 = match sign {
            X3Sign::NonNeg => self.params.lambda3,
            X3Sign::Neg => -self.params.lambda3,
        };
        Ok([g1, g2, g3])
    }

    /// Upper bound on ∇Ṽ·f with ũ = 0 from the region-wise estimates:
    /// -μṼ (A, F), -a_B Ṽ (B), -(P⁻¹)′(v)μv - λ₃μ|x̃₃| (C, D) and
    /// -(P⁻¹)′(z)kβX γ_E z - λ₃μ|x̃₃| (E, valid on Ḡ).
    pub fn region_decay_bound(&self, dev: &Deviation) -> Result<f64> {
        let (region, _) = self.region(dev)?;
        let mu = self.model.mu;
        let v = self.value(dev)?;
        let tail = self.params.lambda3 * mu * abs(dev.x3);
        Ok(match region {
            EnRegion::A | EnRegion::F => -mu * v,
            EnRegion::B => -self.derived_constants().a_b * v,
            EnRegion::C | EnRegion::D => {
                let s = self.shape.p_arg(region, dev.x1, dev.x2);
                -self.shape.p_inv_deriv(s) * mu * s - tail
            }
            EnRegion::E => {
                let c = self.derived_constants();
                let z = self.shape.p_arg(region, dev.x1, dev.x2);
                -self.shape.p_inv_deriv(z) * self.params.k * self.model.beta * c.x2_floor * c.gamma_e * z - tail
            }
        })
    }

    /// η(l).
    pub fn eta(&self, l: f64) -> f64 {
        self.shape.eta(self.params.lambda3, l)
    }

    /// Smallest l ∈ [0, L̄] with η(l) ≥ y, or `None` if η(L̄) < y.
    pub fn eta_inv(&self, y: f64) -> Option<f64> {
        if y <= 0.0 {
            return Some(0.0);
        }
        let l_bar = self.params.l_bar;
        if self.eta(l_bar) < y {
            return None;
        }
        let (mut lo, mut hi) = (0.0, l_bar);
        while hi - lo > 1e-12 * l_bar {
            let mid = 0.5 * (lo + hi);
            if self.eta(mid) >= y {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

impl IssLyapunov for EnLyapunov {
    fn model(&self) -> &ModelParams {
        &self.model
    }

    fn equilibrium(&self) -> &Equilibrium {
        &self.eq
    }

    fn value(&self, dev: &Deviation) -> Result<f64> {
        EnLyapunov::value(self, dev)
    }

    fn gradient(&self, dev: &Deviation) -> Result<[f64; 3]> {
        EnLyapunov::gradient(self, dev)
    }

    fn value_extended(&self, dev: &Deviation) -> f64 {
        if !self.eq.admits(dev) {
            return f64::NAN;
        }
        let (region, _) = self.classify(dev);
        self.shape.v12(region, dev.x1, dev.x2) + self.params.lambda3 * abs(dev.x3)
    }

    fn in_certified_set(&self, dev: &Deviation) -> bool {
        self.in_sublevel(dev, self.params.l_bar)
    }

    /// (-δμP(L̄)/λ₁, δμL̄/λ₁).
    fn input_range(&self) -> (f64, f64) {
        let lp = &self.params;
        let scale = lp.delta * self.model.mu / lp.lambda1;
        (-scale * self.shape.p(lp.l_bar), scale * lp.l_bar)
    }

    /// max{λ₁ū/(δμ), η⁻¹(λ₁ū/(δμ))}, available while it stays below L̄.
    fn iss_gain(&self, u_sup: f64) -> Option<f64> {
        let lp = &self.params;
        let a = lp.lambda1 * abs(u_sup) / (lp.delta * self.model.mu);
        if a >= lp.l_bar {
            return None;
        }
        self.eta_inv(a).map(|b| a.max(b))
    }
}
