//! Newton–Krylov solves of `F¹(φ,t) = 0` and continuation in `t`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::functionals::{class_constants, ClassConstants, FunctionalError};
use crate::grid::ScalarField;
use crate::kahler::{assemble, residual_twisted, HermitianFormField, KahlerError, KahlerState};
use crate::krylov::{gmres, GmresSettings};
use crate::linop::LinearizedOperator;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Kahler(#[from] KahlerError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("schedule must start at 0 and increase strictly within [0, 1]")]
    Schedule,
    #[error("no admissible Newton step at iteration {iteration} (residual {residual:.3e}); last trial: {reason}")]
    LineSearch {
        iteration: usize,
        residual: f64,
        reason: String,
    },
    #[error("Newton did not reach {tol:.1e} in {iterations} iterations (residual {residual:.3e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("Krylov solve broke down at iteration {iteration}: relative residual {relative_residual:.3e}")]
    KrylovBreakdown {
        iteration: usize,
        relative_residual: f64,
    },
    #[error("continuation stalled at t = {t}")]
    Stalled { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSettings {
    pub tol_outer: f64,
    pub max_newton: usize,
    pub damping: f64,
    pub max_halvings: usize,
    /// Krylov tolerance is `forcing·min(1, ‖F¹‖_∞)`.
    pub forcing: f64,
    pub max_krylov: usize,
    pub restart: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol_outer: 1e-9,
            max_newton: 30,
            damping: 0.5,
            max_halvings: 8,
            forcing: 1e-3,
            max_krylov: 400,
            restart: 60,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |s: &str| Err(SolverError::Settings(s.into()));
        if !(self.tol_outer > 0.0) {
            return bad("tol_outer must be positive");
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad("damping must lie in (0, 1)");
        }
        if !(self.forcing > 0.0 && self.forcing < 1.0) {
            return bad("forcing must lie in (0, 1)");
        }
        if self.max_newton == 0 || self.max_krylov == 0 || self.restart == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

/// Outcome of one Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub state: KahlerState,
    pub iterations: usize,
    /// `‖F¹‖_∞` before each iteration and at the end.
    pub residual_history: Vec<f64>,
    pub krylov_iterations: usize,
}

impl NewtonReport {
    pub fn residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }
}

/// Mode-wise inverse of `−P(k)`, `P(k) = t(|k|²/4)² + (1−t)λ|k|²/4`.
fn precondition(u: &ScalarField, t: f64, lambda: f64) -> ScalarField {
    let grid = u.grid();
    let spec = grid.spectrum(u);
    grid.apply_symbol(&spec, |k, _| {
        let q = 0.25 * k.iter().map(|v| v * v).sum::<f64>();
        let p = t * q * q + (1.0 - t) * lambda * q;
        if q == 0.0 || p == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(-1.0 / p, 0.0)
        }
    })
}

fn flat_mean_zero(f: &ScalarField) -> ScalarField {
    let m = f.mean();
    f.map(|v| v - m)
}

/// Solves `F¹(φ,t) = 0` from `phi_init`. The result has flat mean zero.
pub fn newton_solve(
    phi_init: &ScalarField,
    chi: &HermitianFormField,
    t: f64,
    settings: &NewtonSettings,
) -> Result<NewtonReport, SolverError> {
    let constants = class_constants(chi)?;
    newton_solve_with(phi_init, chi, &constants, t, settings)
}

pub fn newton_solve_with(
    phi_init: &ScalarField,
    chi: &HermitianFormField,
    constants: &ClassConstants,
    t: f64,
    settings: &NewtonSettings,
) -> Result<NewtonReport, SolverError> {
    settings.validate()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(KahlerError::TimeOutOfRange(t).into());
    }
    let lambda = chi.constant_min_eigenvalue();
    let mut state = assemble(&flat_mean_zero(phi_init))?;
    let mut f = residual_twisted(&state, chi, constants, t)?;
    let mut history = vec![f.sup_norm()];
    let mut krylov_total = 0;
    for iteration in 0..settings.max_newton {
        let r = *history.last().unwrap();
        if r <= settings.tol_outer {
            return Ok(NewtonReport {
                state,
                iterations: iteration,
                residual_history: history,
                krylov_iterations: krylov_total,
            });
        }
        let op = LinearizedOperator::new(state.clone(), chi, t)?;
        let grid = state.grid().clone();
        // 𝓛 does not preserve the mean, so both sides are projected: the
        // constant left in F¹ after the step is quadratically small
        let rhs: Vec<f64> = flat_mean_zero(&f).values().iter().map(|v| -v).collect();
        let gm = GmresSettings {
            rel_tol: settings.forcing * r.min(1.0),
            restart: settings.restart,
            max_iter: settings.max_krylov,
        };
        let out = gmres(
            |y| {
                let y = ScalarField::new(&grid, y.to_vec()).map_err(KahlerError::from)?;
                let image = op.apply(&precondition(&y, t, lambda))?;
                Ok::<_, KahlerError>(flat_mean_zero(&image).into_values())
            },
            &rhs,
            &gm,
        )?;
        krylov_total += out.iterations;
        // an unconverged but decreasing solve still gives a usable direction
        if !out.converged && out.relative_residual > 0.5 {
            return Err(SolverError::KrylovBreakdown {
                iteration,
                relative_residual: out.relative_residual,
            });
        }
        let step = precondition(&ScalarField::new(&grid, out.x).map_err(KahlerError::from)?, t, lambda);

        let mut lambda_step = 1.0;
        let mut accepted = None;
        let mut reason = String::new();
        for _ in 0..=settings.max_halvings {
            let trial = flat_mean_zero(&state.phi().axpy(lambda_step, &step));
            match assemble(&trial) {
                Ok(s) => {
                    let ft = residual_twisted(&s, chi, constants, t)?;
                    let rt = ft.sup_norm();
                    if rt < r {
                        accepted = Some((s, ft, rt));
                        break;
                    }
                    reason = format!("step {lambda_step} gave residual {rt:.3e}");
                }
                Err(e) => reason = format!("step {lambda_step}: {e}"),
            }
            lambda_step *= settings.damping;
        }
        let Some((s, ft, rt)) = accepted else {
            return Err(SolverError::LineSearch {
                iteration,
                residual: r,
                reason,
            });
        };
        state = s;
        f = ft;
        history.push(rt);
    }
    let residual = *history.last().unwrap();
    if residual <= settings.tol_outer {
        return Ok(NewtonReport {
            state,
            iterations: settings.max_newton,
            residual_history: history,
            krylov_iterations: krylov_total,
        });
    }
    Err(SolverError::MaxIterations {
        iterations: settings.max_newton,
        residual,
        tol: settings.tol_outer,
    })
}

/// The `t = 0` J-equation `tr_φχ = χ̄`, solved from `φ = 0`.
pub fn solve_j_equation(chi: &HermitianFormField, settings: &NewtonSettings) -> Result<NewtonReport, SolverError> {
    newton_solve(&chi.grid().zeros(), chi, 0.0, settings)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSettings {
    pub newton: NewtonSettings,
    pub max_step_halvings: usize,
    /// Extrapolate from the last two accepted states instead of reusing the
    /// last one.
    pub secant_predictor: bool,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            newton: NewtonSettings::default(),
            max_step_halvings: 4,
            secant_predictor: false,
        }
    }
}

/// `t = 0, 0.05, …, 1`.
pub fn default_schedule() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub newton_iterations: usize,
    pub residual_sup: f64,
    pub step_halvings: usize,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Last accepted `t` before the step size underflowed.
    Stalled { t: f64 },
}

#[derive(Debug, Clone)]
pub struct ContinuationRun {
    pub chi: HermitianFormField,
    pub schedule: Vec<f64>,
    /// Accepted `(t, φ_t)` in increasing `t`.
    pub states: Vec<(f64, ScalarField)>,
    pub records: Vec<StepRecord>,
    pub status: RunStatus,
    /// Why the last failed attempt failed, when stalled.
    pub failure: Option<SolverError>,
}

impl ContinuationRun {
    /// Largest accepted `t`, the run's estimate of the solvable range.
    pub fn last_t(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.0)
    }

    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn require_completed(&self) -> Result<&Self, SolverError> {
        match self.status {
            RunStatus::Completed => Ok(self),
            RunStatus::Stalled { t } => Err(SolverError::Stalled { t }),
        }
    }
}

fn record(t: f64, report: &NewtonReport, halvings: usize) -> StepRecord {
    StepRecord {
        t,
        newton_iterations: report.iterations,
        residual_sup: report.residual(),
        step_halvings: halvings,
        residual_history: report.residual_history.clone(),
    }
}

/// Marches `t` along `schedule`, halving a failed step up to
/// `max_step_halvings` times before declaring a stall.
pub fn continue_path(
    chi: &HermitianFormField,
    schedule: &[f64],
    settings: &ContinuationSettings,
) -> Result<ContinuationRun, SolverError> {
    let increasing = schedule.windows(2).all(|w| w[1] > w[0]);
    if schedule.first() != Some(&0.0) || !increasing || schedule.iter().any(|&t| t > 1.0) {
        return Err(SolverError::Schedule);
    }
    settings.newton.validate()?;
    let constants = class_constants(chi)?;
    let mut run = ContinuationRun {
        chi: chi.clone(),
        schedule: schedule.to_vec(),
        states: Vec::new(),
        records: Vec::new(),
        status: RunStatus::Completed,
        failure: None,
    };
    let start = newton_solve_with(&chi.grid().zeros(), chi, &constants, 0.0, &settings.newton);
    let start = match start {
        Ok(r) => r,
        Err(e) => {
            run.status = RunStatus::Stalled { t: 0.0 };
            run.failure = Some(e);
            return Ok(run);
        }
    };
    run.records.push(record(0.0, &start, 0));
    run.states.push((0.0, start.state.phi().clone()));

    for &target in &schedule[1..] {
        let mut halvings = 0;
        while run.last_t() < target {
            let (t_prev, phi_prev) = run.states.last().cloned().unwrap();
            let step = (target - t_prev) / f64::powi(2.0, halvings as i32);
            let t_try = if halvings == 0 { target } else { t_prev + step };
            let guess = match (settings.secant_predictor, run.states.len()) {
                (true, len) if len >= 2 => {
                    let (t0, phi0) = &run.states[len - 2];
                    let slope = (t_try - t_prev) / (t_prev - t0);
                    phi_prev.axpy(slope, &(&phi_prev - phi0))
                }
                _ => phi_prev.clone(),
            };
            match newton_solve_with(&guess, chi, &constants, t_try, &settings.newton) {
                Ok(report) => {
                    run.records.push(record(t_try, &report, halvings));
                    run.states.push((t_try, report.state.phi().clone()));
                }
                Err(e) => {
                    halvings += 1;
                    if halvings > settings.max_step_halvings {
                        run.status = RunStatus::Stalled { t: t_prev };
                        run.failure = Some(e);
                        return Ok(run);
                    }
                }
            }
        }
    }
    Ok(run)
}
