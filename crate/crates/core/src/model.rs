//! SIR vector field with demography, its equilibria, the basic
//! reproduction number and the total-population bound.

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::math::{abs, exp};
use crate::{Error, Result};

/// Relative tolerance used when comparing R̂₀ with 1.
pub const REGIME_TOL: f64 = 1e-12;

/// Rates of the SIR model and the nominal newborn/immigration rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Transmission rate β.
    pub beta: f64,
    /// Recovery rate γ.
    pub gamma: f64,
    /// Death rate μ.
    pub mu: f64,
    /// Nominal newborn/immigration rate B̂.
    pub b_hat: f64,
}

/// Absolute populations (continuum).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub s: f64,
    pub i: f64,
    pub r: f64,
}

impl State {
    pub const fn new(s: f64, i: f64, r: f64) -> Self {
        Self { s, i, r }
    }

    pub const fn to_array(self) -> [f64; 3] {
        [self.s, self.i, self.r]
    }

    pub const fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Total population N = S + I + R.
    pub fn total(&self) -> f64 {
        self.s + self.i + self.r
    }

    pub fn is_nonnegative(&self) -> bool {
        self.s >= 0.0 && self.i >= 0.0 && self.r >= 0.0
    }
}

/// State relative to an equilibrium, x̃ = x - x̂.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Deviation {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl Deviation {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0);

    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    pub const fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub const fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn norm(&self) -> f64 {
        crate::math::norm3(self.to_array())
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x1 * s, self.x2 * s, self.x3 * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    DiseaseFree,
    Endemic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub point: State,
}

impl Equilibrium {
    /// x̃ = x - x̂.
    pub fn deviation(&self, x: &State) -> Deviation {
        Deviation::new(x.s - self.point.s, x.i - self.point.i, x.r - self.point.r)
    }

    /// x = x̂ + x̃.
    pub fn state(&self, dev: &Deviation) -> State {
        State::new(
            self.point.s + dev.x1,
            self.point.i + dev.x2,
            self.point.r + dev.x3,
        )
    }

    /// Whether `dev` lies in [-x̂ᵢ, ∞)³, i.e. corresponds to a physical state.
    pub fn admits(&self, dev: &Deviation) -> bool {
        self.state(dev).is_nonnegative()
    }
}

/// Where the parameters sit relative to the two stability theorems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// R̂₀ < 1.
    DiseaseFreeStable,
    /// R̂₀ = 1 within [`REGIME_TOL`].
    Boundary,
    /// 1 < R̂₀ ≤ γ/μ + 2.
    EndemicExists,
    /// R̂₀ > γ/μ + 2.
    EndemicTheoremApplies,
}

impl ModelParams {
    pub fn new(beta: f64, gamma: f64, mu: f64, b_hat: f64) -> Result<Self> {
        let p = Self {
            beta,
            gamma,
            mu,
            b_hat,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("beta", self.beta)?;
        positive("gamma", self.gamma)?;
        positive("mu", self.mu)?;
        if !(self.b_hat.is_finite() && self.b_hat >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "b_hat must be nonnegative and finite, got {}",
                self.b_hat
            )));
        }
        Ok(())
    }

    /// Same rates with a different nominal input.
    pub fn with_b_hat(&self, b_hat: f64) -> Self {
        Self { b_hat, ..*self }
    }

    /// Basic reproduction number R̂₀ = βB̂ / (μ(γ+μ)).
    pub fn r0_hat(&self) -> f64 {
        self.beta * self.b_hat / (self.mu * (self.gamma + self.mu))
    }

    /// Threshold γ/μ + 2 above which the endemic Lyapunov construction applies.
    pub fn endemic_threshold(&self) -> f64 {
        self.gamma / self.mu + 2.0
    }

    /// Newborn rate B̂ at which R̂₀ = 1.
    pub fn critical_b_hat(&self) -> f64 {
        self.mu * (self.gamma + self.mu) / self.beta
    }

    /// x_f = (B̂/μ, 0, 0).
    pub fn disease_free_eq(&self) -> Equilibrium {
        Equilibrium {
            kind: EquilibriumKind::DiseaseFree,
            point: State::new(self.b_hat / self.mu, 0.0, 0.0),
        }
    }

    /// x_e = ((γ+μ)/β, μ(R̂₀-1)/β, γ(R̂₀-1)/β), defined for R̂₀ > 1.
    pub fn endemic_eq(&self) -> Result<Equilibrium> {
        let r0 = self.r0_hat();
        if r0 <= 1.0 + REGIME_TOL {
            return Err(Error::R0NotAboveOne { r0 });
        }
        let excess = r0 - 1.0;
        Ok(Equilibrium {
            kind: EquilibriumKind::Endemic,
            point: State::new(
                (self.gamma + self.mu) / self.beta,
                self.mu * excess / self.beta,
                self.gamma * excess / self.beta,
            ),
        })
    }

    /// Equilibrium of the requested kind.
    pub fn equilibrium(&self, kind: EquilibriumKind) -> Result<Equilibrium> {
        match kind {
            EquilibriumKind::DiseaseFree => Ok(self.disease_free_eq()),
            EquilibriumKind::Endemic => self.endemic_eq(),
        }
    }

    /// Right-hand side (Ṡ, İ, Ṙ) for input `b`.
    #[inline]
    pub fn rhs(&self, x: &State, b: f64) -> [f64; 3] {
        let infection = self.beta * x.i * x.s;
        [
            b - self.mu * x.s - infection,
            infection - (self.gamma + self.mu) * x.i,
            self.gamma * x.i - self.mu * x.r,
        ]
    }

    pub fn classify_regime(&self) -> Regime {
        let r0 = self.r0_hat();
        if abs(r0 - 1.0) <= REGIME_TOL {
            Regime::Boundary
        } else if r0 < 1.0 {
            Regime::DiseaseFreeStable
        } else if r0 <= self.endemic_threshold() {
            Regime::EndemicExists
        } else {
            Regime::EndemicTheoremApplies
        }
    }
}

/// Upper bound e^{-μt}N(0) + b_max/μ on N(t) valid for every input
/// B(t) ∈ [0, b_max].
pub fn total_population_bound(x0: &State, b_max: f64, p: &ModelParams, t: f64) -> f64 {
    exp(-p.mu * t) * x0.total() + b_max / p.mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn df() -> ModelParams {
        ModelParams::new(0.0002, 0.032, 0.015, 3.0).unwrap()
    }

    fn en() -> ModelParams {
        df().with_b_hat(17.0)
    }

    #[test]
    fn r0_matches_reported_values() {
        assert!((df().r0_hat() - 0.851064).abs() < 1e-6);
        assert_relative_eq!(en().r0_hat(), 0.0034 / 0.000705, max_relative = 1e-14);
        assert_eq!(df().with_b_hat(0.0).r0_hat(), 0.0);
    }

    #[test]
    fn equilibria() {
        let xf = df().disease_free_eq().point;
        assert_relative_eq!(xf.s, 200.0, max_relative = 1e-14);
        assert_eq!((xf.i, xf.r), (0.0, 0.0));
        assert_eq!(df().with_b_hat(0.0).disease_free_eq().point, State::default());
        assert_relative_eq!(en().disease_free_eq().point.s, 1_133.333_333_333, max_relative = 1e-10);

        let xe = en().endemic_eq().unwrap().point;
        assert_relative_eq!(xe.s, 235.0, max_relative = 1e-12);
        assert!((xe.i - 286.70).abs() < 5e-3);
        assert!((xe.r - 611.63).abs() < 5e-3);
        assert_relative_eq!(xe.s * en().beta, en().gamma + en().mu, max_relative = 1e-15);
    }

    #[test]
    fn endemic_requires_r0_above_one() {
        assert!(matches!(df().endemic_eq(), Err(Error::R0NotAboveOne { .. })));
        let at_one = df().with_b_hat(df().critical_b_hat());
        assert!(at_one.endemic_eq().is_err());
        assert_eq!(at_one.classify_regime(), Regime::Boundary);
    }

    #[test]
    fn rhs_hand_evaluation() {
        let f = df().rhs(&State::new(100.0, 50.0, 0.0), 3.0);
        assert_relative_eq!(f[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(f[1], -1.35, epsilon = 1e-12);
        assert_relative_eq!(f[2], 1.6, epsilon = 1e-12);
    }

    #[test]
    fn rhs_vanishes_at_equilibria() {
        let p = df();
        assert_eq!(p.rhs(&p.disease_free_eq().point, p.b_hat), [0.0; 3]);
        let p = en();
        let f = p.rhs(&p.endemic_eq().unwrap().point, p.b_hat);
        assert!(crate::math::norm3(f) < 1e-9 * 1000.0);
    }

    #[test]
    fn regimes() {
        assert_eq!(df().classify_regime(), Regime::DiseaseFreeStable);
        assert_eq!(en().classify_regime(), Regime::EndemicTheoremApplies);
        assert!((en().endemic_threshold() - 4.1333).abs() < 1e-4);
        // R̂₀ = 2 lies between 1 and γ/μ + 2 = 4.1333.
        let two = df().with_b_hat(2.0 * df().critical_b_hat());
        assert_relative_eq!(two.r0_hat(), 2.0, max_relative = 1e-14);
        assert_eq!(two.classify_regime(), Regime::EndemicExists);
    }

    #[test]
    fn population_bound_limits() {
        let p = df();
        let x0 = State::new(100.0, 50.0, 0.0);
        assert_relative_eq!(total_population_bound(&x0, 3.0, &p, 0.0), 350.0, max_relative = 1e-14);
        assert_relative_eq!(total_population_bound(&x0, 3.0, &p, 1e5), 200.0, max_relative = 1e-12);
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(ModelParams::new(0.0, 0.1, 0.1, 1.0).is_err());
        assert!(ModelParams::new(0.1, -0.1, 0.1, 1.0).is_err());
        assert!(ModelParams::new(0.1, 0.1, 0.1, -1.0).is_err());
        assert!(ModelParams::new(0.1, 0.1, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn json_shape() {
        let s = serde_json::to_string(&df()).unwrap();
        assert_eq!(s, r#"{"beta":0.0002,"gamma":0.032,"mu":0.015,"b_hat":3.0}"#);
        assert!(serde_json::from_str::<ModelParams>(r#"{"beta":1,"gamma":1,"mu":1,"b_hat":1,"x":2}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn params() -> impl Strategy<Value = ModelParams> {
            (1e-5..1e-2f64, 1e-3..1.0f64, 1e-3..0.5f64, 0.0..100.0f64)
                .prop_map(|(b, g, m, bh)| ModelParams::new(b, g, m, bh).unwrap())
        }

        proptest! {
            #[test]
            fn boundary_faces_point_inward(p in params(), s in 0.0..1e4f64, i in 0.0..1e4f64, r in 0.0..1e4f64, b in 0.0..100.0f64) {
                prop_assert!(p.rhs(&State::new(0.0, i, r), b)[0] >= 0.0);
                prop_assert!(p.rhs(&State::new(s, 0.0, r), b)[1] >= 0.0);
                prop_assert!(p.rhs(&State::new(s, i, 0.0), b)[2] >= 0.0);
            }

            #[test]
            fn total_population_balance(p in params(), s in 0.0..1e4f64, i in 0.0..1e4f64, r in 0.0..1e4f64, b in 0.0..100.0f64) {
                let x = State::new(s, i, r);
                let f = p.rhs(&x, b);
                let lhs = f[0] + f[1] + f[2];
                let rhs = b - p.mu * x.total();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + b.abs() + p.mu * x.total() + p.beta * s * i));
            }

            #[test]
            fn endemic_point_is_stationary(p in params()) {
                if let Ok(e) = p.endemic_eq() {
                    let f = p.rhs(&e.point, p.b_hat);
                    let scale = 1.0 + e.point.total();
                    prop_assert!(crate::math::norm3(f) < 1e-9 * scale);
                    prop_assert!((e.point.s * p.beta - (p.gamma + p.mu)).abs() <= 1e-15 * (p.gamma + p.mu));
                }
            }
        }
    }
}
