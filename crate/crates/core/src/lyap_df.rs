//! ISS Lyapunov function for the disease-free equilibrium (R̂₀ < 1).
//!
//! With c = βx̂₁/μ₀ the function is piecewise linear on ℝ×ℝ₊²:
//!
//! ```text
//! C:  x̃₁ < -c(x̃₂ + λ₃x̃₃)        Ṽ = -x̃₁/c
//! B:  -c(x̃₂ + λ₃x̃₃) ≤ x̃₁ < 0    Ṽ = x̃₂ + λ₃x̃₃
//! A:  0 ≤ x̃₁                    Ṽ = x̃₁ + x̃₂ + λ₃x̃₃
//! ```
//!
//! and satisfies Ṽ ≥ |ũ|/(δ(μ-μ₀)) ⇒ ∇Ṽ·f ≤ -(1-δ)(μ-μ₀)Ṽ away from the
//! region boundaries.

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::lyap::{boundary_band, IssLyapunov};
use crate::math::{abs, dot3, sqrt};
use crate::model::{Deviation, Equilibrium, ModelParams};
use crate::{Error, Result};

/// Constants defining the disease-free Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfLyapParams {
    pub mu0: f64,
    pub eps: f64,
    pub gamma0: f64,
    pub lambda3: f64,
    pub delta: f64,
}

/// Optional user choices for [`select_df_params`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfOverrides {
    #[serde(default)]
    pub mu0: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DfRegion {
    A,
    B,
    C,
}

/// Admissible open interval for ε.
pub fn eps_interval(p: &ModelParams) -> (f64, f64) {
    let r0 = p.r0_hat();
    ((p.mu / (p.gamma + p.mu) - r0).max(0.0), 1.0 - r0)
}

fn check_hypothesis(p: &ModelParams) -> Result<()> {
    p.validate()?;
    if p.b_hat <= 0.0 {
        return Err(Error::Regime(format!("disease-free construction needs B̂ > 0, got {}", p.b_hat)));
    }
    let r0 = p.r0_hat();
    if r0 >= 1.0 {
        return Err(Error::Regime(format!("disease-free construction needs R0 < 1, got {r0}")));
    }
    Ok(())
}

/// Picks (μ₀, ε, δ) and derives γ₀ and λ₃.
///
/// Defaults: ε at the midpoint of its admissible interval, μ₀ = 0.99μ,
/// δ = 0.5.
pub fn select_df_params(p: &ModelParams, overrides: DfOverrides) -> Result<DfLyapParams> {
    check_hypothesis(p)?;
    let (eps_lo, eps_hi) = eps_interval(p);
    let eps = overrides.eps.unwrap_or(0.5 * (eps_lo + eps_hi));
    let mu0 = overrides.mu0.unwrap_or(0.99 * p.mu);
    let delta = overrides.delta.unwrap_or(0.5);
    let gamma0 = (p.gamma + p.mu) * (p.r0_hat() + eps) - p.mu;
    let lp = DfLyapParams {
        mu0,
        eps,
        gamma0,
        lambda3: 1.0 - gamma0 / p.gamma,
        delta,
    };
    lp.validate(p).map_err(|e| match e {
        Error::Regime(m) => Error::Regime(m),
        other => Error::InfeasibleOverride(format!("{other}")),
    })?;
    Ok(lp)
}

impl DfLyapParams {
    /// Checks every feasibility invariant against `p`.
    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        check_hypothesis(p)?;
        let bad = |m: alloc::string::String| Err(Error::InfeasibleOverride(m));
        if !(self.mu0 > 0.0 && self.mu0 < p.mu) {
            return bad(format!("mu0 must lie in (0, mu = {}), got {}", p.mu, self.mu0));
        }
        let (lo, hi) = eps_interval(p);
        if !(self.eps > lo && self.eps < hi) {
            return bad(format!("eps must lie in ({lo}, {hi}), got {}", self.eps));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        let gamma0 = (p.gamma + p.mu) * (p.r0_hat() + self.eps) - p.mu;
        if abs(self.gamma0 - gamma0) > 1e-12 * (1.0 + abs(gamma0)) {
            return bad(format!("gamma0 = {} inconsistent with eps (expected {gamma0})", self.gamma0));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 < p.gamma) {
            return bad(format!("gamma0 must lie in (0, gamma), got {}", self.gamma0));
        }
        let lambda3 = 1.0 - self.gamma0 / p.gamma;
        if abs(self.lambda3 - lambda3) > 1e-12 || self.lambda3 <= 0.0 {
            return bad(format!("lambda3 = {} inconsistent (expected {lambda3})", self.lambda3));
        }
        Ok(())
    }
}

/// The disease-free ISS Lyapunov function bound to its model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfLyapunov {
    model: ModelParams,
    eq: Equilibrium,
    params: DfLyapParams,
    /// c = βx̂₁/μ₀, slope of the B/C boundary.
    slope: f64,
}

impl DfLyapunov {
    pub fn new(model: ModelParams, params: DfLyapParams) -> Result<Self> {
        params.validate(&model)?;
        let eq = model.disease_free_eq();
        Ok(Self {
            model,
            eq,
            params,
            slope: model.beta * eq.point.s / params.mu0,
        })
    }

    /// Selects parameters with [`select_df_params`] and builds the function.
    pub fn select(model: ModelParams, overrides: DfOverrides) -> Result<Self> {
        Self::new(model, select_df_params(&model, overrides)?)
    }

    pub fn params(&self) -> &DfLyapParams {
        &self.params
    }

    /// The B/C boundary position -c(x̃₂ + λ₃x̃₃).
    pub fn bc_threshold(&self, dev: &Deviation) -> f64 {
        -self.slope * (dev.x2 + self.params.lambda3 * dev.x3)
    }

    fn check_domain(&self, dev: &Deviation) -> Result<()> {
        if dev.x2 >= 0.0 && dev.x3 >= 0.0 && dev.x1.is_finite() && dev.x2.is_finite() && dev.x3.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "disease-free function needs x2, x3 >= 0, got {dev:?}"
            )))
        }
    }

    pub fn region(&self, dev: &Deviation) -> Result<DfRegion> {
        self.check_domain(dev)?;
        Ok(if dev.x1 >= 0.0 {
            DfRegion::A
        } else if dev.x1 >= self.bc_threshold(dev) {
            DfRegion::B
        } else {
            DfRegion::C
        })
    }

    /// Formula of one region evaluated regardless of where `dev` lies.
    pub fn segment_value(&self, region: DfRegion, dev: &Deviation) -> f64 {
        let tail = dev.x2 + self.params.lambda3 * dev.x3;
        match region {
            DfRegion::A => dev.x1 + tail,
            DfRegion::B => tail,
            DfRegion::C => -dev.x1 / self.slope,
        }
    }

    pub fn value(&self, dev: &Deviation) -> Result<f64> {
        Ok(self.segment_value(self.region(dev)?, dev))
    }

    pub fn segment_gradient(&self, region: DfRegion) -> [f64; 3] {
        let l3 = self.params.lambda3;
        match region {
            DfRegion::A => [1.0, 1.0, l3],
            DfRegion::B => [0.0, 1.0, l3],
            DfRegion::C => [-1.0 / self.slope, 0.0, 0.0],
        }
    }

    /// Distance from `dev` to the nearest region boundary.
    pub fn boundary_distance(&self, dev: &Deviation) -> f64 {
        if dev.x1 >= 0.0 {
            return dev.x1;
        }
        let c = self.slope;
        let l3 = self.params.lambda3;
        let plane = abs(dev.x1 - self.bc_threshold(dev)) / sqrt(1.0 + c * c * (1.0 + l3 * l3));
        plane.min(-dev.x1)
    }

    pub fn gradient(&self, dev: &Deviation) -> Result<[f64; 3]> {
        let region = self.region(dev)?;
        let distance = self.boundary_distance(dev);
        if distance <= boundary_band(dev) {
            return Err(Error::OnBoundary { distance });
        }
        Ok(self.segment_gradient(region))
    }

    /// χ(|u|) = |u|/(δ(μ-μ₀)).
    pub fn chi(&self, u_mag: f64) -> f64 {
        abs(u_mag) / (self.params.delta * (self.model.mu - self.params.mu0))
    }

    /// Guaranteed decay rate (1-δ)(μ-μ₀).
    pub fn decay_rate(&self) -> f64 {
        (1.0 - self.params.delta) * (self.model.mu - self.params.mu0)
    }

    /// -∇Ṽ·f(x̂+x̃, B̂+ũ) - (1-δ)(μ-μ₀)Ṽ. Nonnegative slack certifies the
    /// ISS implication at this point whenever Ṽ ≥ χ(|ũ|).
    pub fn decrease_slack(&self, dev: &Deviation, u: f64) -> Result<f64> {
        let g = self.gradient(dev)?;
        let x = self.eq.state(dev);
        let v = self.value(dev)?;
        Ok(-dot3(g, self.model.rhs(&x, self.model.b_hat + u)) - self.decay_rate() * v)
    }

    /// ε̲ = min{ε(γ₀+μ), μ}: decay rate guaranteed in region B.
    pub fn region_b_rate(&self) -> f64 {
        (self.params.eps * (self.params.gamma0 + self.model.mu)).min(self.model.mu)
    }
}

impl IssLyapunov for DfLyapunov {
    fn model(&self) -> &ModelParams {
        &self.model
    }

    fn equilibrium(&self) -> &Equilibrium {
        &self.eq
    }

    fn value(&self, dev: &Deviation) -> Result<f64> {
        DfLyapunov::value(self, dev)
    }

    fn gradient(&self, dev: &Deviation) -> Result<[f64; 3]> {
        DfLyapunov::gradient(self, dev)
    }

    fn value_extended(&self, dev: &Deviation) -> f64 {
        DfLyapunov::value(self, dev).unwrap_or(f64::NAN)
    }

    fn in_certified_set(&self, dev: &Deviation) -> bool {
        dev.x1 >= -self.eq.point.s && dev.x2 >= 0.0 && dev.x3 >= 0.0
    }

    fn input_range(&self) -> (f64, f64) {
        (-self.model.b_hat, f64::INFINITY)
    }

    fn iss_gain(&self, u_sup: f64) -> Option<f64> {
        Some(self.chi(u_sup))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> ModelParams {
        ModelParams::new(0.0002, 0.032, 0.015, 3.0).unwrap()
    }

    fn reference() -> DfLyapunov {
        DfLyapunov::select(
            model(),
            DfOverrides {
                mu0: Some(0.0148),
                eps: Some(0.0745),
                delta: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn reference_overrides_accepted() {
        let v = reference();
        let g0 = 0.047 * (model().r0_hat() + 0.0745) - 0.015;
        assert_relative_eq!(v.params().gamma0, g0, max_relative = 1e-12);
        assert_relative_eq!(v.params().lambda3, 1.0 - g0 / 0.032, max_relative = 1e-12);
        // The alternative μ₀ = 0.0149 is admissible too.
        assert!(DfLyapunov::select(model(), DfOverrides { mu0: Some(0.0149), ..Default::default() }).is_ok());
    }

    #[test]
    fn defaults() {
        let p = model();
        let lp = select_df_params(&p, DfOverrides::default()).unwrap();
        let r0 = p.r0_hat();
        let expected = ((p.mu / (p.gamma + p.mu) - r0).max(0.0) + (1.0 - r0)) / 2.0;
        assert_relative_eq!(lp.eps, expected, max_relative = 1e-14);
        assert!((lp.eps - 0.0745).abs() < 1e-4);
        assert_relative_eq!(lp.mu0, 0.99 * p.mu);
        assert_eq!(lp.delta, 0.5);
        assert!(lp.gamma0 > 0.0 && lp.gamma0 < p.gamma);
    }

    #[test]
    fn infeasible_overrides() {
        let p = model();
        let at_edge = DfOverrides { eps: Some(1.0 - p.r0_hat()), ..Default::default() };
        assert!(matches!(select_df_params(&p, at_edge), Err(Error::InfeasibleOverride(_))));
        let mu0 = DfOverrides { mu0: Some(p.mu), ..Default::default() };
        assert!(matches!(select_df_params(&p, mu0), Err(Error::InfeasibleOverride(_))));
        assert!(matches!(select_df_params(&p.with_b_hat(17.0), DfOverrides::default()), Err(Error::Regime(_))));
        assert!(matches!(select_df_params(&p.with_b_hat(0.0), DfOverrides::default()), Err(Error::Regime(_))));
    }

    #[test]
    fn regions() {
        let v = reference();
        assert_eq!(v.region(&Deviation::new(1.0, 5.0, 5.0)).unwrap(), DfRegion::A);
        assert_eq!(v.region(&Deviation::new(-1.0, 0.0, 0.0)).unwrap(), DfRegion::C);
        // Threshold -(0.0002·200/0.0148)·5 ≈ -13.51 < -1.
        assert_relative_eq!(v.bc_threshold(&Deviation::new(-1.0, 5.0, 0.0)), -0.04 / 0.0148 * 5.0, max_relative = 1e-12);
        assert_eq!(v.region(&Deviation::new(-1.0, 5.0, 0.0)).unwrap(), DfRegion::B);
        assert_eq!(v.region(&Deviation::new(0.0, 0.0, 0.0)).unwrap(), DfRegion::A);
        assert!(matches!(v.region(&Deviation::new(0.0, -1.0, 0.0)), Err(Error::Domain(_))));
        assert!(matches!(v.value(&Deviation::new(0.0, 0.0, -1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn values() {
        let v = reference();
        assert_eq!(v.value(&Deviation::ZERO).unwrap(), 0.0);
        let l3 = v.params().lambda3;
        assert_relative_eq!(v.value(&Deviation::new(1.0, 2.0, 3.0)).unwrap(), 3.0 + 3.0 * l3, max_relative = 1e-15);
    }

    #[test]
    fn gradients() {
        let v = reference();
        let l3 = v.params().lambda3;
        assert_eq!(v.gradient(&Deviation::new(5.0, 5.0, 5.0)).unwrap(), [1.0, 1.0, l3]);
        let g = v.gradient(&Deviation::new(-150.0, 1.0, 1.0)).unwrap();
        assert_eq!(g, [-0.0148 / 0.04, 0.0, 0.0]);
        assert!(matches!(v.gradient(&Deviation::new(0.0, 1.0, 1.0)), Err(Error::OnBoundary { .. })));
        let on_bc = Deviation::new(v.bc_threshold(&Deviation::new(0.0, 3.0, 2.0)), 3.0, 2.0);
        assert!(matches!(v.gradient(&on_bc), Err(Error::OnBoundary { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let v = reference();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 100 {
            let d = Deviation::new(rng.gen_range(-200.0..600.0), rng.gen_range(0.0..600.0), rng.gen_range(0.0..600.0));
            let scale = 1.0 + d.norm();
            let h = 1e-6 * scale;
            if v.boundary_distance(&d) < 10.0 * h || d.x2 < h || d.x3 < h {
                continue;
            }
            let g = v.gradient(&d).unwrap();
            let a = d.to_array();
            for k in 0..3 {
                let mut up = a;
                let mut dn = a;
                up[k] += h;
                dn[k] -= h;
                let fd = (v.value(&Deviation::from_array(up)).unwrap() - v.value(&Deviation::from_array(dn)).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "component {k}: fd {fd} vs {}", g[k]);
            }
            checked += 1;
        }
    }

    #[test]
    fn chi_values() {
        let v = reference();
        assert_eq!(v.chi(0.0), 0.0);
        assert_relative_eq!(v.chi(1.0), 10000.0, max_relative = 1e-9);
        assert_relative_eq!(v.chi(2.0), 2.0 * v.chi(1.0), max_relative = 1e-15);
    }

    #[test]
    fn slack_with_zero_input() {
        let v = reference();
        assert_eq!(v.decrease_slack(&Deviation::new(5.0, 0.0, 0.0), 0.0).map(|s| s >= 0.0), Ok(true));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let d = Deviation::new(rng.gen_range(-200.0..600.0), rng.gen_range(0.0..600.0), rng.gen_range(0.0..600.0));
            let Ok(s) = v.decrease_slack(&d, 0.0) else { continue };
            assert!(s >= 0.0, "slack {s} at {d:?}");
            if v.region(&d).unwrap() == DfRegion::B {
                let x = v.equilibrium().state(&d);
                let lie = dot3(v.gradient(&d).unwrap(), v.model().rhs(&x, v.model().b_hat));
                assert!(lie <= -v.region_b_rate() * v.value(&d).unwrap() + 1e-12 * (1.0 + d.norm()));
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let lp = *reference().params();
        let s = serde_json::to_string(&lp).unwrap();
        assert_eq!(serde_json::from_str::<DfLyapParams>(&s).unwrap(), lp);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn positive_definite(x1 in -1e4..1e4f64, x2 in 0.0..1e4f64, x3 in 0.0..1e4f64) {
                let d = Deviation::new(x1, x2, x3);
                prop_assume!(d.norm() > 0.0);
                prop_assert!(reference().value(&d).unwrap() > 0.0);
            }

            #[test]
            fn continuous_across_boundaries(x2 in 0.0..1e3f64, x3 in 0.0..1e3f64) {
                let v = reference();
                let at_zero = Deviation::new(0.0, x2, x3);
                let a = v.segment_value(DfRegion::A, &at_zero);
                let b = v.segment_value(DfRegion::B, &at_zero);
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
                let on_bc = Deviation::new(v.bc_threshold(&at_zero), x2, x3);
                let b = v.segment_value(DfRegion::B, &on_bc);
                let c = v.segment_value(DfRegion::C, &on_bc);
                prop_assert!((b - c).abs() <= 1e-9 * (1.0 + b.abs()));
            }

            #[test]
            fn radially_unbounded(x1 in -1e3..1e3f64, x2 in 0.0..1e3f64, x3 in 0.0..1e3f64) {
                let v = reference();
                let d = Deviation::new(x1, x2, x3);
                prop_assume!(d.norm() > 1e-3);
                let v1 = v.value(&d).unwrap();
                let v10 = v.value(&d.scale(10.0)).unwrap();
                prop_assert!((v10 - 10.0 * v1).abs() <= 1e-9 * v10);
            }
        }
    }
}
