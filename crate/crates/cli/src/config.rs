//! Run configuration: one JSON file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sir_iss_core::levelset::{Plane, Window, DEFAULT_RESOLUTION};
use sir_iss_core::verify::CertifyOptions;
use sir_iss_core::{DfOverrides, EnLyapParams, EnTarget, EquilibriumKind, InputSignal, ModelParams, State, DEFAULT_SEED};

use crate::error::CliError;

/// Default step for `simulate` and trajectory checks.
pub const DEFAULT_DT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub equilibrium: EquilibriumKind,
    /// Choices for the disease-free function; unset fields use defaults.
    #[serde(default)]
    pub df_overrides: DfOverrides,
    /// Explicit endemic constants; take precedence over `en_target`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub en_params: Option<EnLyapParams>,
    /// Target for the automatic endemic parameter search.
    #[serde(default = "default_target")]
    pub en_target: EnTarget,
    /// B(t); defaults to the constant B̂.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<InputSignal>,
    /// Initial state for `simulate`; defaults to (B̂/μ - 10, 10, 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<State>,
    /// Horizon; defaults to 50/μ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub certify: CertifyOptions,
    #[serde(default)]
    pub levelsets: LevelsetConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsetConfig {
    /// Levels to extract; empty means the built-in defaults.
    #[serde(default)]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub plane: Plane,
    /// Window in the free coordinates; derived from the levels when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 2],
    /// Write S, I instead of x̃₁, x̃₂ (only on the x̃₃ = c plane).
    #[serde(default)]
    pub absolute: bool,
}

impl Default for LevelsetConfig {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            plane: Plane::default(),
            window: None,
            resolution: default_resolution(),
            absolute: false,
        }
    }
}

fn default_target() -> EnTarget {
    EnTarget::LBar { l_bar: 340.0 }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_resolution() -> [usize; 2] {
    [DEFAULT_RESOLUTION, DEFAULT_RESOLUTION]
}

/// Values given on the command line; each replaces the config entry.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub levels: Option<Vec<f64>>,
    pub equilibrium: Option<EquilibriumKind>,
    pub absolute: bool,
}

impl RunConfig {
    /// Defaults around a model, used when no file is given.
    pub fn for_model(model: ModelParams, equilibrium: EquilibriumKind) -> Self {
        Self {
            model,
            equilibrium,
            df_overrides: DfOverrides::default(),
            en_params: None,
            en_target: default_target(),
            signal: None,
            initial_state: None,
            t_end: None,
            dt: DEFAULT_DT,
            seed: DEFAULT_SEED,
            certify: CertifyOptions::default(),
            levelsets: LevelsetConfig::default(),
            out_dir: default_out(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(v) = &o.out {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.dt {
            self.dt = v;
        }
        if let Some(v) = o.t_end {
            self.t_end = Some(v);
        }
        if let Some(v) = &o.levels {
            self.levelsets.levels = v.clone();
        }
        if let Some(v) = o.equilibrium {
            self.equilibrium = v;
        }
        if o.absolute {
            self.levelsets.absolute = true;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CliError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::Config(format!("t_end must be positive, got {t}")));
            }
        }
        if let Some(s) = &self.signal {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(x) = &self.initial_state {
            if !x.is_nonnegative() {
                return Err(CliError::Config(format!("initial state must be nonnegative, got {x:?}")));
            }
        }
        if self.levelsets.levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(CliError::Config("levels must be finite and >= 0".into()));
        }
        if self.levelsets.resolution.iter().any(|&n| n < 2) {
            return Err(CliError::Config("resolution must be at least 2x2".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.t_end.unwrap_or(50.0 / self.model.mu)
    }

    pub fn signal(&self) -> InputSignal {
        self.signal.clone().unwrap_or(InputSignal::constant(self.model.b_hat))
    }

    pub fn initial_state(&self) -> State {
        self.initial_state
            .unwrap_or_else(|| State::new((self.model.b_hat / self.model.mu - 10.0).max(0.0), 10.0, 0.0))
    }

    /// Certification options with the run-level seed, step and horizon.
    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            seed: self.seed,
            dt: self.dt,
            t_end: self.t_end,
            ..self.certify
        }
    }
}

/// `df`, `disease_free` or `endemic`.
pub fn parse_equilibrium(s: &str) -> Result<EquilibriumKind, String> {
    match s {
        "df" | "disease_free" | "disease-free" => Ok(EquilibriumKind::DiseaseFree),
        "endemic" | "en" => Ok(EquilibriumKind::Endemic),
        other => Err(format!("unknown equilibrium '{other}', expected df or endemic")),
    }
}

/// Comma-separated list of levels.
pub fn parse_levels(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad level '{t}': {e}")))
        .collect()
}
