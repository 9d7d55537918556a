use alloc::string::String;

/// Errors raised by the model, the integrator, the Lyapunov functions and
/// the certification harness.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("endemic equilibrium requires R0 > 1 (got {r0})")]
    R0NotAboveOne { r0: f64 },

    #[error("hypothesis not satisfied: {0}")]
    Regime(String),

    #[error("infeasible override: {0}")]
    InfeasibleOverride(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("point lies within the boundary band of a region (distance {distance:e})")]
    OnBoundary { distance: f64 },

    #[error("deviation ({x1}, {x2}, {x3}) is outside the set H")]
    OutOfH { x1: f64, x2: f64, x3: f64 },

    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("state component {component} became negative ({value:e}) at t = {t}")]
    NegativeState { t: f64, component: usize, value: f64 },

    #[error("invalid integration request: {0}")]
    InvalidStep(String),

    #[error("steady state not reached by t = {t_max} (residual {residual:e})")]
    NotConverged { t_max: f64, residual: f64 },

    #[error("feasibility search did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("trajectory and Lyapunov function use different model parameters")]
    MismatchedEquilibrium,

    #[error("input outside the admissible range: {0}")]
    Range(String),
}
