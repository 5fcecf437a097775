//! Command dispatch and run outputs.
//!
//! Every command writes into its output directory:
//! `summary.json`, a `log.csv` with columns
//! `step, t_or_time, residual_sup, j_chi, k_energy, twisted, dt_or_step_halvings`
//! (one row per accepted step, or per slice for `geodesic`), and its
//! terminal fields as TCSK files. All files are written atomically.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use tcsk_core::flows::{run_flow_observed, FlowError, FlowKind, StopReason};
use tcsk_core::functionals::{energy_report, Functionals};
use tcsk_core::geodesic::{
    convexity_profile, second_derivative_identity_check, solve_geodesic, GeodesicError, ProfileFunctional,
};
use tcsk_core::grid::random_band_limited;
use tcsk_core::kahler::HermitianFormField;
use tcsk_core::solver::{continue_path, ContinuationSettings, RunStatus};
use tcsk_core::{ScalarField, TorusGrid};

use crate::checks::run_checks;
use crate::config::{Command, ConfigError, FieldSpec, RunConfig, Wave};
use crate::field_io::{read_field, read_field_on, write_atomic, write_field, FieldIoError};

/// Overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "TCSK_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "tcsk-out";

pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const UNDERFLOW: i32 = 4;
    pub const IO: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] FieldIoError),
    #[error("{0}")]
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => exit::CONFIG,
            RunError::Io(_) => exit::IO,
            RunError::Numerical(_) => exit::NUMERICAL,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

fn config_error(path: &str, message: impl Into<String>) -> RunError {
    RunError::Config(ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: Command,
    pub status: String,
    /// Largest accepted `t` of a continuation run.
    pub r_chi: Option<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
    pub grid: String,
    pub tolerances: Value,
    pub results: Value,
    pub files: Vec<String>,
    pub message: Option<String>,
}

/// A finished run: what was written and the process exit status.
#[derive(Debug, Clone)]
pub struct Report {
    pub summary: Summary,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct LogRow {
    step: usize,
    t_or_time: f64,
    residual_sup: Option<f64>,
    j_chi: f64,
    k_energy: f64,
    twisted: f64,
    dt_or_step_halvings: f64,
}

/// `--output-dir`, then the environment, then the config, then the default.
pub fn resolve_output_dir(flag: Option<PathBuf>, env: Option<PathBuf>, config: Option<PathBuf>) -> PathBuf {
    flag.or(env)
        .or(config)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

pub fn realize(spec: &FieldSpec, grid: &TorusGrid, seed: u64, key: &str) -> Result<ScalarField, RunError> {
    spec.validate(key, grid.sizes())?;
    Ok(match spec {
        FieldSpec::Zero => grid.zeros(),
        FieldSpec::Modes { terms } => grid.field_from_fn(|x| {
            terms
                .iter()
                .map(|term| {
                    let phase: f64 = term.k.iter().zip(x).map(|(&k, &xa)| k as f64 * xa).sum();
                    term.amplitude
                        * match term.wave {
                            Wave::Cos => phase.cos(),
                            Wave::Sin => phase.sin(),
                        }
                })
                .sum()
        }),
        FieldSpec::Random {
            max_mode,
            amplitude,
            seed: own,
        } => random_band_limited(grid, *max_mode, *amplitude, own.unwrap_or(seed))
            .map_err(|e| config_error(key, e.to_string()))?,
        FieldSpec::File { path } => read_field_on(path, grid)?,
    })
}

fn build_chi(config: &RunConfig, grid: &TorusGrid) -> Result<HermitianFormField, RunError> {
    let psi = realize(&config.chi.psi, grid, config.seed, "chi.psi")?;
    let chi = HermitianFormField::new(config.chi.constant(grid.n()), psi).map_err(|e| config_error("chi", e.to_string()))?;
    chi.require_positive().map_err(|e| config_error("chi.psi", e.to_string()))?;
    Ok(chi)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn field(&mut self, name: &str, f: &ScalarField) -> Result<(), RunError> {
        let p = self.path(name);
        Ok(write_field(&p, f)?)
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).map_err(numerical)?;
        text.push('\n');
        let p = self.path(name);
        Ok(write_atomic(&p, text.as_bytes())?)
    }

    fn log(&mut self, rows: &[LogRow]) -> Result<(), RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(numerical)?;
        }
        let bytes = w.into_inner().map_err(|e| numerical(e.error()))?;
        let p = self.path("log.csv");
        Ok(write_atomic(&p, &bytes)?)
    }
}

struct Partial {
    status: String,
    r_chi: Option<f64>,
    tolerances: Value,
    results: Value,
    message: Option<String>,
    exit_code: i32,
}

fn success(status: &str, tolerances: Value, results: Value) -> Partial {
    Partial {
        status: status.into(),
        r_chi: None,
        tolerances,
        results,
        message: None,
        exit_code: exit::SUCCESS,
    }
}

/// Runs a validated config, writing everything under `config.output_dir`
/// (or the default directory).
pub fn run(config: &RunConfig, input: Option<&Path>) -> Result<Report, RunError> {
    config.validate()?;
    let start = Instant::now();
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    std::fs::create_dir_all(&dir).map_err(|source| FieldIoError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut out = Outputs { dir, files: Vec::new() };
    let (grid_label, partial) = match config.command {
        Command::Energy => {
            let path = input
                .map(Path::to_path_buf)
                .or_else(|| config.energy.input.clone())
                .ok_or_else(|| config_error("energy.input", "a field file is required (or pass --input)"))?;
            let phi = read_field(&path)?;
            let label = phi.grid().label();
            (label, energy(config, &phi, &mut out)?)
        }
        Command::Check => ("per criterion".to_string(), check(config, &mut out)?),
        _ => {
            let grid = TorusGrid::new(config.grid.n, &config.grid.sizes()).map_err(|e| config_error("grid", e.to_string()))?;
            let partial = match config.command {
                Command::Continue => continuation(config, &grid, &mut out)?,
                Command::Jflow => flow(config, &grid, FlowKind::JFlow, &mut out)?,
                Command::Calabi => flow(config, &grid, FlowKind::TwistedCalabi { t: config.t }, &mut out)?,
                Command::Geodesic => geodesic(config, &grid, &mut out)?,
                Command::Energy | Command::Check => unreachable!(),
            };
            (grid.label(), partial)
        }
    };
    out.files.push("summary.json".into());
    let summary = Summary {
        command: config.command,
        status: partial.status,
        r_chi: partial.r_chi,
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: config.seed,
        grid: grid_label,
        tolerances: partial.tolerances,
        results: partial.results,
        files: out.files.clone(),
        message: partial.message,
    };
    out.files.pop();
    out.json("summary.json", &summary)?;
    Ok(Report {
        summary,
        exit_code: partial.exit_code,
    })
}

fn continuation(config: &RunConfig, grid: &TorusGrid, out: &mut Outputs) -> Result<Partial, RunError> {
    let chi = build_chi(config, grid)?;
    let settings = ContinuationSettings {
        newton: config.newton,
        max_step_halvings: config.continuation.max_step_halvings,
        secant_predictor: config.continuation.secant_predictor,
    };
    let run = continue_path(&chi, &config.schedule, &settings).map_err(numerical)?;
    let f = Functionals::new(&chi).map_err(numerical)?;
    let mut rows = Vec::with_capacity(run.records.len());
    for (i, (rec, (t, phi))) in run.records.iter().zip(&run.states).enumerate() {
        let j = f.j_chi(phi).map_err(numerical)?;
        let k = f.k_energy(phi).map_err(numerical)?;
        rows.push(LogRow {
            step: i,
            t_or_time: *t,
            residual_sup: Some(rec.residual_sup),
            j_chi: j,
            k_energy: k,
            twisted: (1.0 - t) * j + t * k,
            dt_or_step_halvings: rec.step_halvings as f64,
        });
    }
    out.log(&rows)?;
    if let Some((_, phi)) = run.states.last() {
        out.field("phi_final.tcsk", phi)?;
    }
    let completed = run.status == RunStatus::Completed;
    Ok(Partial {
        status: if completed { "completed" } else { "stalled" }.into(),
        r_chi: Some(run.last_t()),
        tolerances: json!({ "newton": config.newton, "continuation": config.continuation }),
        results: json!({
            "accepted_steps": run.records.len(),
            "newton_iterations": run.records.iter().map(|r| r.newton_iterations).sum::<usize>(),
            "final_residual_sup": run.records.last().map(|r| r.residual_sup),
            "final_phi_sup": run.states.last().map(|(_, p)| p.sup_norm()),
        }),
        message: run.failure.as_ref().map(ToString::to_string),
        exit_code: if completed { exit::SUCCESS } else { exit::NUMERICAL },
    })
}

fn flow(config: &RunConfig, grid: &TorusGrid, kind: FlowKind, out: &mut Outputs) -> Result<Partial, RunError> {
    let chi = build_chi(config, grid)?;
    let start = realize(&config.start, grid, config.seed, "start")?;
    let f = Functionals::new(&chi).map_err(numerical)?;
    let t = kind.t();
    let mut rows = Vec::new();
    let (mut j, mut k) = (0.0, 0.0);
    let run = run_flow_observed(&start, kind, &chi, &config.flow, |rec, before, after| {
        if rec.step == 0 {
            j = f.j_chi(after)?;
            k = f.k_energy(after)?;
        } else {
            j += f.j_chi_segment(before, after)?;
            k += f.k_energy_segment(before, after)?;
        }
        rows.push(LogRow {
            step: rec.step,
            t_or_time: rec.time,
            residual_sup: Some(rec.residual_sup),
            j_chi: j,
            k_energy: k,
            twisted: (1.0 - t) * j + t * k,
            dt_or_step_halvings: rec.dt,
        });
        Ok::<(), FlowError>(())
    });
    let run = run.map_err(|e| match e {
        FlowError::Settings(m) => config_error("flow", m),
        other => numerical(other),
    })?;
    out.log(&rows)?;
    out.field("phi_final.tcsk", run.state.phi())?;
    let (status, exit_code) = match run.stop {
        StopReason::Converged => ("converged", exit::SUCCESS),
        StopReason::StepUnderflow => ("step_underflow", exit::UNDERFLOW),
        StopReason::MaxSteps => ("max_steps", exit::NUMERICAL),
    };
    let last = run.records.last().copied();
    Ok(Partial {
        status: status.into(),
        r_chi: None,
        tolerances: json!({ "flow": config.flow }),
        results: json!({
            "kind": kind,
            "accepted_steps": run.records.len() - 1,
            "rejected_steps": run.rejected,
            "final_time": last.map(|r| r.time),
            "final_residual_sup": run.residual(),
            "final_energy": last.map(|r| r.energy),
        }),
        message: None,
        exit_code,
    })
}

fn geodesic(config: &RunConfig, grid: &TorusGrid, out: &mut Outputs) -> Result<Partial, RunError> {
    let geo = &config.geodesic;
    let chi = build_chi(config, grid)?;
    let phi0 = realize(&geo.phi0, grid, config.seed, "geodesic.phi0")?;
    let phi1 = realize(&geo.phi1, grid, config.seed.wrapping_add(1), "geodesic.phi1")?;
    let path = solve_geodesic(&phi0, &phi1, geo.eps, geo.n_t, &geo.solver).map_err(|e| match e {
        GeodesicError::Precondition(m) => config_error("geodesic", m),
        other => numerical(other),
    })?;
    let f = Functionals::new(&chi).map_err(numerical)?;
    let (j0, k0) = (f.j_chi(&phi0).map_err(numerical)?, f.k_energy(&phi0).map_err(numerical)?);
    let jp = convexity_profile(&path, &chi, ProfileFunctional::JChi).map_err(numerical)?;
    let kp = convexity_profile(&path, &chi, ProfileFunctional::KEnergy).map_err(numerical)?;
    let ep = convexity_profile(&path, &chi, ProfileFunctional::Twisted(config.t)).map_err(numerical)?;
    let identity = second_derivative_identity_check(&path, &chi).map_err(numerical)?;
    let t = config.t;
    let mut rows = Vec::with_capacity(path.len());
    let mut slice_files = Vec::with_capacity(path.len());
    for (j, s) in path.times().into_iter().enumerate() {
        let interior = j > 0 && j + 1 < path.len();
        let residual = if interior {
            Some(path.slice_residual(j).map_err(numerical)?.sup_norm())
        } else {
            None
        };
        let (jv, kv) = (j0 + jp.values[j], k0 + kp.values[j]);
        rows.push(LogRow {
            step: j,
            t_or_time: s,
            residual_sup: residual,
            j_chi: jv,
            k_energy: kv,
            twisted: (1.0 - t) * jv + t * kv,
            dt_or_step_halvings: path.dt(),
        });
        let name = format!("geodesic/slice_{j:03}.tcsk");
        out.field(&name, &path.slices[j])?;
        slice_files.push(name);
    }
    out.log(&rows)?;
    out.json(
        "geodesic/manifest.json",
        &json!({
            "eps": path.eps,
            "n_t": path.len(),
            "residual": path.residual,
            "newton_iterations": path.newton_iterations,
            "times": path.times(),
            "slices": slice_files,
        }),
    )?;
    Ok(success(
        "converged",
        json!({ "geodesic": geo.solver, "eps": geo.eps, "n_t": geo.n_t }),
        json!({
            "residual": path.residual,
            "newton_iterations": path.newton_iterations,
            "mean_deflection": path.mean_deflection(),
            "min_second_difference_j_chi": jp.min(),
            "min_second_difference_twisted": ep.min(),
            "identity_relative_gap": identity.max_relative_gap,
        }),
    ))
}

fn energy(config: &RunConfig, phi: &ScalarField, out: &mut Outputs) -> Result<Partial, RunError> {
    let chi = build_chi(config, phi.grid())?;
    let report = energy_report(phi, &chi, config.t, config.seed).map_err(numerical)?;
    out.json("energy.json", &report)?;
    Ok(success("evaluated", json!({ "t": config.t }), serde_json::to_value(&report).map_err(numerical)?))
}

fn check(config: &RunConfig, out: &mut Outputs) -> Result<Partial, RunError> {
    let outcomes = run_checks(&config.check.criteria, |o| println!("{}", o.line()));
    out.json("check.json", &outcomes)?;
    let passed = outcomes.iter().all(|o| o.passed);
    Ok(Partial {
        status: if passed { "passed" } else { "failed" }.into(),
        r_chi: None,
        tolerances: json!("as pinned per criterion"),
        results: json!(outcomes
            .iter()
            .map(|o| json!({ "id": o.id, "name": o.name, "passed": o.passed, "detail": o.detail }))
            .collect::<Vec<_>>()),
        message: None,
        exit_code: if passed { exit::SUCCESS } else { exit::NUMERICAL },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, ModeTerm};

    fn config(text: &str, dir: &Path) -> RunConfig {
        let mut c = parse_config(text).unwrap();
        c.output_dir = Some(dir.to_path_buf());
        c
    }

    #[test]
    fn output_dir_precedence() {
        let p = |s: &str| Some(PathBuf::from(s));
        assert_eq!(resolve_output_dir(p("a"), p("b"), p("c")), PathBuf::from("a"));
        assert_eq!(resolve_output_dir(None, p("b"), p("c")), PathBuf::from("b"));
        assert_eq!(resolve_output_dir(None, None, p("c")), PathBuf::from("c"));
        assert_eq!(resolve_output_dir(None, None, None), PathBuf::from(DEFAULT_OUTPUT_DIR));
    }

    #[test]
    fn realize_modes_and_random() {
        let g = TorusGrid::uniform(1, 16).unwrap();
        let spec = FieldSpec::Modes {
            terms: vec![ModeTerm {
                k: vec![1, 2],
                amplitude: 0.5,
                wave: Wave::Sin,
            }],
        };
        let f = realize(&spec, &g, 0, "x").unwrap();
        let exact = g.field_from_fn(|x| 0.5 * (x[0] + 2.0 * x[1]).sin());
        assert!(f.max_abs_diff(&exact) < 1e-15);
        let r = FieldSpec::Random {
            max_mode: 2,
            amplitude: 0.1,
            seed: None,
        };
        assert_eq!(realize(&r, &g, 3, "x").unwrap(), realize(&r, &g, 3, "x").unwrap());
        assert_ne!(realize(&r, &g, 3, "x").unwrap(), realize(&r, &g, 4, "x").unwrap());
        let big = FieldSpec::Random {
            max_mode: 8,
            amplitude: 0.1,
            seed: None,
        };
        assert!(matches!(realize(&big, &g, 0, "x"), Err(RunError::Config(_))));
    }

    #[test]
    fn continue_with_identity_is_flat() {
        let dir = tempfile::tempdir().unwrap();
        let c = config("command = \"continue\"\n[grid]\nsizes = [16, 16]\n", dir.path());
        let report = run(&c, None).unwrap();
        assert_eq!(report.exit_code, 0);
        assert_eq!(report.summary.status, "completed");
        assert_eq!(report.summary.r_chi, Some(1.0));
        let phi = read_field(&dir.path().join("phi_final.tcsk")).unwrap();
        assert!(phi.sup_norm() <= 1e-10);
        let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        let mut lines = log.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,t_or_time,residual_sup,j_chi,k_energy,twisted,dt_or_step_halvings"
        );
        assert_eq!(lines.count(), 21);
    }

    #[test]
    fn nonpositive_twist_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = "command = \"continue\"\n[grid]\nsizes = [16, 16]\n[chi.psi]\nkind = \"modes\"\nterms = [{ k = [1, 0], amplitude = 8.0 }]\n";
        let err = run(&config(text, dir.path()), None).unwrap_err();
        assert_eq!(err.exit_code(), exit::CONFIG);
        assert!(err.to_string().starts_with("chi.psi"), "{err}");
    }

    #[test]
    fn energy_needs_input() {
        let dir = tempfile::tempdir().unwrap();
        let err = run(&config("command = \"energy\"", dir.path()), None).unwrap_err();
        assert_eq!(err.exit_code(), exit::CONFIG);
        let missing = dir.path().join("missing.tcsk");
        let err = run(&config("command = \"energy\"", dir.path()), Some(&missing)).unwrap_err();
        assert_eq!(err.exit_code(), exit::IO);
    }
}
