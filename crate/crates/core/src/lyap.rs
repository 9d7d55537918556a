//! Common interface of the two ISS Lyapunov functions.

use crate::math::dot3;
use crate::model::{Deviation, Equilibrium, ModelParams};
use crate::Result;

/// Width of the band around region boundaries where gradients are not
/// evaluated: τ_b = 1e-9·(1 + ‖x̃‖).
pub fn boundary_band(dev: &Deviation) -> f64 {
    1e-9 * (1.0 + dev.norm())
}

/// A piecewise-smooth ISS Lyapunov function anchored at one equilibrium.
pub trait IssLyapunov {
    fn model(&self) -> &ModelParams;

    fn equilibrium(&self) -> &Equilibrium;

    /// Ṽ(x̃). Errors outside the set on which the function is defined.
    fn value(&self, dev: &Deviation) -> Result<f64>;

    /// Analytic gradient; errors inside the boundary band.
    fn gradient(&self, dev: &Deviation) -> Result<[f64; 3]>;

    /// Ṽ extended to where its closed form is finite: `+∞` where the
    /// formula diverges, `NaN` outside the physical domain. Used for
    /// contouring.
    fn value_extended(&self, dev: &Deviation) -> f64;

    /// Whether `dev` belongs to the set on which the ISS property is
    /// certified (the whole domain for the disease-free function, the
    /// sublevel set Ḡ for the endemic one).
    fn in_certified_set(&self, dev: &Deviation) -> bool;

    /// Admissible perturbations ũ = B - B̂ as (lower, upper); bounds are
    /// open except for the disease-free lower bound -B̂.
    fn input_range(&self) -> (f64, f64);

    /// Threshold χ(sup|ũ|) of the ISS implication, or `None` when the
    /// magnitude exceeds what the construction covers.
    fn iss_gain(&self, u_sup: f64) -> Option<f64>;

    /// ∇Ṽ·f(x̂ + x̃, B̂ + ũ).
    fn derivative(&self, dev: &Deviation, u: f64) -> Result<f64> {
        let g = self.gradient(dev)?;
        let p = self.model();
        let x = self.equilibrium().state(dev);
        Ok(dot3(g, p.rhs(&x, p.b_hat + u)))
    }
}
