use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;
use sir_iss_core::levelset::{extract_contours, Contour, Plane, Window};
use sir_iss_core::ode::integrate;
use sir_iss_core::verify::{certify_disease_free, certify_endemic, df_grid_rows, VerificationReport};
use sir_iss_core::{DfLyapunov, EnLyapunov, EquilibriumKind, IssLyapunov, State};

use crate::config::RunConfig;
use crate::error::CliError;

/// Default levels for the disease-free function.
pub const DF_LEVELS: [f64; 9] = [10.0, 30.0, 60.0, 100.0, 180.0, 260.0, 340.0, 420.0, 500.0];
/// Default levels for the endemic function.
pub const EN_LEVELS: [f64; 5] = [20.0, 100.0, 180.0, 260.0, 340.0];

/// The Lyapunov function selected by a config.
pub enum Selected {
    Df(DfLyapunov),
    En(EnLyapunov),
}

impl Selected {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        Ok(match cfg.equilibrium {
            EquilibriumKind::DiseaseFree => Selected::Df(DfLyapunov::select(cfg.model, cfg.df_overrides)?),
            EquilibriumKind::Endemic => Selected::En(match cfg.en_params {
                Some(lp) => EnLyapunov::new(cfg.model, lp)?,
                None => EnLyapunov::select(cfg.model, cfg.en_target)?,
            }),
        })
    }

    fn tag(&self) -> &'static str {
        match self {
            Selected::Df(_) => "df",
            Selected::En(_) => "endemic",
        }
    }
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.join(name))
}

fn write_json<T: Serialize>(path: &PathBuf, v: &T) -> Result<(), CliError> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, v).map_err(|e| CliError::Io(e.into()))?;
    writeln!(f)?;
    Ok(())
}

pub fn equilibria(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let p = &cfg.model;
    let summary = json!({
        "r0_hat": p.r0_hat(),
        "endemic_threshold": p.endemic_threshold(),
        "regime": p.classify_regime(),
        "disease_free": p.disease_free_eq().point,
        "endemic": p.endemic_eq().ok().map(|e| e.point),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let traj = integrate(&cfg.model, cfg.initial_state(), &cfg.signal(), cfg.horizon(), cfg.dt)?;
    let path = out_file(cfg, "trajectory.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["t", "S", "I", "R", "B"])?;
    for ((t, x), b) in traj.times.iter().zip(&traj.states).zip(&traj.inputs) {
        w.write_record([t, &x.s, &x.i, &x.r, b].map(|v| v.to_string()))?;
    }
    w.flush()?;
    let last = traj.last_state();
    writeln!(
        out,
        "wrote {} ({} rows); final state S={:.6} I={:.6} R={:.6}",
        path.display(),
        traj.len(),
        last.s,
        last.i,
        last.r
    )?;
    Ok(())
}

pub fn certify(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let sel = Selected::from_config(cfg)?;
    let opts = cfg.certify_options();
    let (report, params): (VerificationReport, serde_json::Value) = match &sel {
        Selected::Df(v) => {
            let path = out_file(cfg, "df_grid.csv")?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["x1t", "x2t", "x3t", "region", "V", "slack"])?;
            for r in df_grid_rows(v, opts.grid_n, 0.0) {
                w.write_record([r.x1t.to_string(), r.x2t.to_string(), r.x3t.to_string(), r.region.to_string(), r.v.to_string(), r.slack.to_string()])?;
            }
            w.flush()?;
            (certify_disease_free(v, &opts)?, json!(v.params()))
        }
        Selected::En(v) => (certify_endemic(v, &opts)?, json!({ "params": v.params(), "feasibility": v.feasibility()? })),
    };
    let path = out_file(cfg, "report.json")?;
    write_json(
        &path,
        &json!({ "equilibrium": sel.tag(), "lyapunov": params, "all_passed": report.all_passed(), "checks": report.checks }),
    )?;
    write!(out, "{report}")?;
    writeln!(out, "wrote {}", path.display())?;
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed {
            failed: report.failures().count(),
            total: report.checks.len(),
        })
    }
}

fn default_window<L: IssLyapunov>(lyap: &L, sel: &Selected, plane: Plane, top: f64) -> Window {
    let eq = lyap.equilibrium().point;
    let m = 1.1 * top;
    match sel {
        Selected::Df(v) => {
            let l3 = v.params().lambda3;
            match plane {
                Plane::X3(_) => Window::new(-eq.s, m, 0.0, m),
                Plane::X2(_) => Window::new(-eq.s, m, 0.0, m / l3),
            }
        }
        Selected::En(v) => {
            let lp = v.params();
            let c = v.derived_constants();
            let x1_max = 1.03 * lp.l_bar.max(top) / lp.lambda1;
            match plane {
                Plane::X3(_) => {
                    let y_min = (1.005 * (c.x2_floor - eq.i)).max(-eq.i * (1.0 - 1e-9));
                    Window::new(-eq.s, x1_max, y_min, 1.005 * lp.l_bar / lp.lambda0())
                }
                Plane::X2(_) => Window::new(-eq.s, x1_max, -eq.r, m / lp.lambda3),
            }
        }
    }
}

fn contours(cfg: &RunConfig, sel: &Selected) -> Result<(Vec<Contour>, State), CliError> {
    let ls = &cfg.levelsets;
    let levels: Vec<f64> = if ls.levels.is_empty() {
        match sel {
            Selected::Df(_) => DF_LEVELS.to_vec(),
            Selected::En(_) => EN_LEVELS.to_vec(),
        }
    } else {
        ls.levels.clone()
    };
    let top = levels.iter().cloned().fold(1.0, f64::max);
    let res = (ls.resolution[0], ls.resolution[1]);
    Ok(match sel {
        Selected::Df(v) => {
            let w = ls.window.unwrap_or_else(|| default_window(v, sel, ls.plane, top));
            (extract_contours(v, &levels, ls.plane, w, res)?, v.equilibrium().point)
        }
        Selected::En(v) => {
            let w = ls.window.unwrap_or_else(|| default_window(v, sel, ls.plane, top));
            (extract_contours(v, &levels, ls.plane, w, res)?, v.equilibrium().point)
        }
    })
}

pub fn levelsets(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let sel = Selected::from_config(cfg)?;
    let (cs, eq) = contours(cfg, &sel)?;
    let abs = cfg.levelsets.absolute;
    // Offsets mapping plane coordinates to populations.
    let (shift, names) = match cfg.levelsets.plane {
        Plane::X3(_) if abs => ([eq.s, eq.i], ["S", "I"]),
        Plane::X2(_) if abs => ([eq.s, eq.r], ["S", "R"]),
        _ => ([0.0, 0.0], ["x1", "x2"]),
    };
    let path = out_file(cfg, &format!("levelsets_{}.csv", sel.tag()))?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["level", "polyline_id", names[0], names[1]])?;
    for c in &cs {
        for (id, poly) in c.polylines.iter().enumerate() {
            for v in poly {
                w.write_record([c.level.to_string(), id.to_string(), (v[0] + shift[0]).to_string(), (v[1] + shift[1]).to_string()])?;
            }
        }
        if let Some(p) = c.point_marker {
            w.write_record([c.level.to_string(), "0".into(), (p[0] + shift[0]).to_string(), (p[1] + shift[1]).to_string()])?;
        }
    }
    w.flush()?;
    for c in &cs {
        writeln!(out, "level {:>8}: {} polylines, {} vertices", c.level, c.polylines.len(), c.vertex_count())?;
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

/// Resolves the Lyapunov constants, prints them with their feasibility
/// margins and writes the resolved config (reloadable as is).
pub fn params(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let sel = Selected::from_config(cfg)?;
    let mut resolved = cfg.clone();
    let summary = match &sel {
        Selected::Df(v) => {
            let lp = v.params();
            resolved.df_overrides.mu0 = Some(lp.mu0);
            resolved.df_overrides.eps = Some(lp.eps);
            resolved.df_overrides.delta = Some(lp.delta);
            json!({ "equilibrium": "df", "params": lp, "decay_rate": v.decay_rate() })
        }
        Selected::En(v) => {
            resolved.en_params = Some(*v.params());
            json!({ "equilibrium": "endemic", "params": v.params(), "feasibility": v.feasibility()?, "input_range": v.input_range() })
        }
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    let path = out_file(cfg, "config.json")?;
    fs::write(&path, resolved.to_json() + "\n")?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}
