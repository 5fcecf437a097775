//! The invariant suite behind `tcsk check`: ten self-contained numerical
//! properties, each with a wall-clock budget.

use std::error::Error;
use std::time::{Duration, Instant};

use serde::Serialize;
use tcsk_core::flows::{run_flow, FlowKind, FlowRun, FlowSettings, StopReason};
use tcsk_core::functionals::{aubin_i_j, class_constants, entropy, Functionals};
use tcsk_core::geodesic::{
    convexity_profile, second_derivative_identity_check, solve_geodesic, GeodesicSettings, ProfileFunctional,
};
use tcsk_core::grid::{integrate_plain, random_band_limited};
use tcsk_core::kahler::{assemble, residual_twisted, trace_form, HermitianFormField};
use tcsk_core::linop::LinearizedOperator;
use tcsk_core::mat;
use tcsk_core::solver::{continue_path, default_schedule, newton_solve, ContinuationSettings, NewtonSettings};
use tcsk_core::{ScalarField, TorusGrid};

type Outcome = Result<Verdict, Box<dyn Error>>;

/// Result of a criterion before timing is taken into account.
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

fn verdict(passed: bool, detail: String) -> Outcome {
    Ok(Verdict { passed, detail })
}

pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub budget: Duration,
    run: fn() -> Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {:>7.2}s / {:>3.0}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

pub static CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "flat fixed point of the path", budget: secs(5), run: flat_fixed_point },
    Criterion { id: 2, name: "round trip to flat", budget: secs(60), run: round_trip_to_flat },
    Criterion { id: 3, name: "gradient checks", budget: secs(120), run: gradient_checks },
    Criterion { id: 4, name: "linearization order", budget: secs(30), run: linearization_order },
    Criterion { id: 5, name: "coercivity at flat", budget: secs(5), run: coercivity },
    Criterion { id: 6, name: "flow/Newton agreement", budget: secs(120), run: flow_newton_agreement },
    Criterion { id: 7, name: "geodesic convexity", budget: secs(300), run: geodesic_convexity },
    Criterion { id: 8, name: "J functional chain", budget: secs(60), run: j_chain },
    Criterion { id: 9, name: "structural identities", budget: secs(60), run: structural_identities },
    Criterion { id: 10, name: "uniqueness at t = 1/2", budget: secs(30), run: uniqueness },
];

pub fn run_criterion(c: &Criterion) -> CheckOutcome {
    let start = Instant::now();
    let result = (c.run)();
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(v) => (v.passed, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if elapsed > c.budget {
        passed = false;
        detail.push_str("; over time budget");
    }
    CheckOutcome {
        id: c.id,
        name: c.name,
        passed,
        detail,
        seconds: elapsed.as_secs_f64(),
        budget_seconds: c.budget.as_secs_f64(),
    }
}

/// Runs the selected criteria in order, calling `report` after each.
pub fn run_checks(ids: &[usize], mut report: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    CRITERIA
        .iter()
        .filter(|c| ids.contains(&c.id))
        .map(|c| {
            let out = run_criterion(c);
            report(&out);
            out
        })
        .collect()
}

fn grid(n: usize, size: usize) -> TorusGrid {
    TorusGrid::uniform(n, size).expect("fixed check grid")
}

fn cos_twist(g: &TorusGrid) -> HermitianFormField {
    let psi = g.field_from_fn(|x| 0.3 * x[0].cos() + 0.2 * (2.0 * x[1]).cos());
    HermitianFormField::new(mat::identity(g.n()), psi).expect("Hermitian")
}

fn flat_fixed_point() -> Outcome {
    let g = grid(1, 64);
    let chi = HermitianFormField::identity(&g);
    let settings = ContinuationSettings {
        newton: NewtonSettings {
            tol_outer: 1e-11,
            ..NewtonSettings::default()
        },
        ..ContinuationSettings::default()
    };
    let run = continue_path(&chi, &default_schedule(), &settings)?;
    let residual = run.records.iter().map(|r| r.residual_sup).fold(0.0, f64::max);
    let phi = run.states.iter().map(|(_, p)| p.sup_norm()).fold(0.0, f64::max);
    verdict(
        run.completed() && run.states.len() == 21 && residual < 1e-10 && phi < 1e-10,
        format!("{} steps, max residual {residual:.1e}, max |phi| {phi:.1e}", run.states.len()),
    )
}

fn round_trip_to_flat() -> Outcome {
    let g = grid(1, 64);
    let chi = cos_twist(&g);
    let run = continue_path(&chi, &default_schedule(), &ContinuationSettings::default())?;
    let Some((t, phi)) = run.states.last() else {
        return verdict(false, "no accepted step".into());
    };
    let end = assemble(phi)?;
    let (phi_sup, r_sup) = (phi.sup_norm(), end.scalar().sup_norm());
    verdict(
        run.completed() && *t == 1.0 && phi_sup < 1e-6 && r_sup < 1e-8,
        format!("R(chi) = {}, |phi(1)| {phi_sup:.1e}, |R| {r_sup:.1e}", run.last_t()),
    )
}

/// Relative error of the central difference at `h = 1e-4` and the order
/// measured between `h = 1e-2` and `1e-3`. The difference `F(φ+hu) − F(φ−hu)`
/// is taken as one straight-segment integral, which is exact by path
/// independence and avoids cancellation. The order is `None` when the error
/// at `h = 1e-2` is already at roundoff: the functional is then quadratic
/// along the line and the difference quotient exact.
fn gradient_error(
    segment: impl Fn(&ScalarField, &ScalarField) -> Result<f64, Box<dyn Error>>,
    exact: f64,
    phi: &ScalarField,
    u: &ScalarField,
) -> Result<(f64, Option<f64>), Box<dyn Error>> {
    let err = |h: f64| -> Result<f64, Box<dyn Error>> {
        let fd = segment(&phi.axpy(-h, u), &phi.axpy(h, u))? / (2.0 * h);
        Ok((fd - exact).abs() / exact.abs())
    };
    let (e2, e3, e4) = (err(1e-2)?, err(1e-3)?, err(1e-4)?);
    let order = (e2 > 1e-12).then(|| (e2 / e3).log10());
    Ok((e4, order))
}

fn gradient_checks() -> Outcome {
    let mut worst_err: f64 = 0.0;
    let mut worst_order = f64::INFINITY;
    let (mut exact_cases, mut cases) = (0, 0);
    for (n, size, pairs) in [(1, 32, 10u64), (2, 16, 3)] {
        let g = grid(n, size);
        let psi = random_band_limited(&g, 2, 0.1, 500 + n as u64)?;
        let chi = HermitianFormField::new(mat::scale(n, &mat::identity(n), 1.3), psi)?;
        let f = Functionals::new(&chi)?;
        for seed in 0..pairs {
            let phi = random_band_limited(&g, 2, 0.15, seed)?;
            let u = random_band_limited(&g, 2, 1.0, 1000 + seed)?;
            let state = assemble(&phi)?;
            let j = gradient_error(|a, b| Ok(f.j_chi_segment(a, b)?), f.j_chi_gradient(&state, &u)?, &phi, &u)?;
            let k = gradient_error(|a, b| Ok(f.k_energy_segment(a, b)?), f.k_energy_gradient(&state, &u), &phi, &u)?;
            for (e, o) in [j, k] {
                cases += 1;
                worst_err = worst_err.max(e);
                match o {
                    Some(o) => worst_order = worst_order.min(o),
                    None => exact_cases += 1,
                }
            }
        }
    }
    verdict(
        worst_err <= 1e-6 && worst_order >= 1.9,
        format!(
            "max rel error {worst_err:.1e} at h=1e-4, min order {worst_order:.2} ({exact_cases} of {cases} differences exact)"
        ),
    )
}

fn linearization_order() -> Outcome {
    let g = grid(1, 32);
    let psi = random_band_limited(&g, 2, 0.2, 11)?;
    let chi = HermitianFormField::new(mat::diag(&[1.2]), psi)?;
    let consts = class_constants(&chi)?;
    let mut worst = f64::INFINITY;
    for seed in 0..5 {
        let phi = random_band_limited(&g, 3, 0.2, 20 + seed)?;
        let u = random_band_limited(&g, 3, 1.0, 40 + seed)?;
        for t in [0.0, 0.3, 0.7, 1.0] {
            let lu = LinearizedOperator::new(assemble(&phi)?, &chi, t)?.apply(&u)?;
            let err = |h: f64| -> Result<f64, Box<dyn Error>> {
                let plus = residual_twisted(&assemble(&phi.axpy(h, &u))?, &chi, &consts, t)?;
                let minus = residual_twisted(&assemble(&phi.axpy(-h, &u))?, &chi, &consts, t)?;
                Ok((&(&plus - &minus) * (0.5 / h)).max_abs_diff(&lu))
            };
            worst = worst.min((err(1e-2)? / err(1e-3)?).log10());
        }
    }
    verdict(worst >= 1.9, format!("min order {worst:.2} over 5 seeds x 4 t"))
}

fn coercivity() -> Outcome {
    let g = grid(1, 64);
    let chi = HermitianFormField::identity(&g);
    let op = LinearizedOperator::new(assemble(&g.zeros())?, &chi, 0.5)?;
    let c = op.coercivity_probe(4, 4, 0)?;
    // flat symbol (t q² + (1−t) q)/q with q = |k|²/4, smallest at |k| = 1
    let (t, q) = (0.5, 0.25);
    let oracle = (t * q * q + (1.0 - t) * q) / q;
    verdict((c - oracle).abs() < 1e-6, format!("probed {c:.9}, symbol value {oracle}"))
}

fn flow_ok(run: &FlowRun, target: &ScalarField) -> (bool, f64, f64) {
    let gap = run.state.phi().max_abs_diff(target);
    let monotone = run.records[1..].iter().all(|r| r.energy_change < 0.0)
        && run.records.windows(2).all(|w| w[1].energy <= w[0].energy);
    (
        run.stop == StopReason::Converged && run.residual() <= 1e-8 && gap < 1e-6 && monotone,
        run.residual(),
        gap,
    )
}

fn flow_newton_agreement() -> Outcome {
    let g = grid(1, 32);
    let chi = HermitianFormField::new(mat::identity(1), g.field_from_fn(|x| 0.3 * x[0].cos()))?;
    let start = random_band_limited(&g, 2, 0.1, 5)?;
    let settings = FlowSettings::default();
    let mut passed = true;
    let mut detail = Vec::new();
    for (label, kind) in [("J-flow", FlowKind::JFlow), ("Calabi", FlowKind::TwistedCalabi { t: 0.5 })] {
        let newton = newton_solve(&g.zeros(), &chi, kind.t(), &NewtonSettings::default())?;
        let run = run_flow(&start, kind, &chi, &settings)?;
        let (ok, res, gap) = flow_ok(&run, newton.state.phi());
        passed &= ok;
        detail.push(format!("{label}: {} steps, residual {res:.1e}, gap {gap:.1e}", run.records.len() - 1));
    }
    verdict(passed, detail.join("; "))
}

fn geodesic_convexity() -> Outcome {
    let g = grid(1, 32);
    let eps = 1e-2;
    let settings = GeodesicSettings::default();
    let chi = HermitianFormField::identity(&g);

    let flat = solve_geodesic(&g.zeros(), &g.zeros(), eps, 17, &settings)?;
    let reference = flat
        .slices
        .iter()
        .zip(flat.times())
        .map(|(p, s)| p.values().iter().map(|v| (v - eps * s * (s - 1.0) / 2.0).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);

    let phi1 = g.field_from_fn(|x| 0.3 * x[0].cos());
    let path = solve_geodesic(&g.zeros(), &phi1, eps, 17, &settings)?;
    let j_min = convexity_profile(&path, &chi, ProfileFunctional::JChi)?.min();
    let e_min = convexity_profile(&path, &chi, ProfileFunctional::Twisted(0.5))?.min();
    let coarse = second_derivative_identity_check(&path, &chi)?.max_relative_gap;
    let fine_path = solve_geodesic(&g.zeros(), &phi1, eps, 33, &settings)?;
    let fine = second_derivative_identity_check(&fine_path, &chi)?.max_relative_gap;
    let ratio = coarse / fine;
    verdict(
        reference < 1e-10 && j_min >= -5.0 * eps && e_min >= -5.0 * eps && coarse <= 1e-3 && (3.0..=5.0).contains(&ratio),
        format!(
            "reference err {reference:.1e}, min d2 J {j_min:.3e}, min d2 E {e_min:.3e}, identity gap {coarse:.2e} -> {fine:.2e} (ratio {ratio:.2})"
        ),
    )
}

fn j_chain() -> Outcome {
    let g = grid(2, 16);
    let f = Functionals::new(&HermitianFormField::identity(&g))?;
    let mut margin = f64::INFINITY;
    for seed in 0..20 {
        let phi = random_band_limited(&g, 2, 0.12, seed)?;
        let top = f.j_mu(&phi, 2)?;
        let one = f.j_mu(&phi, 1)?;
        let (_, aubin) = aubin_i_j(&phi)?;
        margin = margin.min(top - one).min(one - aubin / 3.0);
    }
    verdict(margin >= -1e-9, format!("min margin {margin:.3e} over 20 seeds"))
}

fn structural_identities() -> Outcome {
    let mut drift: f64 = 0.0;
    let mut mean: f64 = 0.0;
    let mut entropy_gap: f64 = 0.0;
    let mut path_gap: f64 = 0.0;
    for (n, size) in [(1, 64), (2, 16)] {
        let g = grid(n, size);
        let chi = HermitianFormField::new(mat::identity(n), random_band_limited(&g, 2, 0.1, 77)?)?;
        let consts = class_constants(&chi)?;
        let f = Functionals::new(&chi)?;
        let flat = assemble(&g.zeros())?;
        let vol0 = integrate_plain(flat.det());
        let tr0 = integrate_plain(&trace_form(&flat, &chi)?.mul(flat.det()));
        for seed in 0..3 {
            let phi = random_band_limited(&g, 2, 0.12, 300 + seed)?;
            let s = assemble(&phi)?;
            drift = drift.max((integrate_plain(s.det()) - vol0).abs() / vol0);
            drift = drift.max((integrate_plain(&trace_form(&s, &chi)?.mul(s.det())) - tr0).abs() / tr0.abs());
            for t in [0.0, 0.5, 1.0] {
                let r = residual_twisted(&s, &chi, &consts, t)?;
                mean = mean.max(integrate_plain(&r.mul(s.det())).abs() / vol0);
            }
            let (k, h) = (f.k_energy(&phi)?, entropy(&phi)?);
            entropy_gap = entropy_gap.max((k - h).abs() / h.abs().max(1e-300));
            let mid = (&phi * 0.5).axpy(1.0, &random_band_limited(&g, 2, 0.05, 400 + seed)?);
            let direct = f.j_chi(&phi)?;
            let split = f.j_chi_segment(&g.zeros(), &mid)? + f.j_chi_segment(&mid, &phi)?;
            path_gap = path_gap.max((direct - split).abs() / direct.abs());
        }
    }
    verdict(
        drift < 1e-9 && mean < 1e-9 && entropy_gap < 1e-7 && path_gap < 1e-8,
        format!(
            "invariant drift {drift:.1e}, residual mean {mean:.1e}, K vs entropy {entropy_gap:.1e}, path {path_gap:.1e}"
        ),
    )
}

fn uniqueness() -> Outcome {
    let g = grid(1, 64);
    let chi = cos_twist(&g);
    let settings = NewtonSettings {
        tol_outer: 1e-11,
        ..NewtonSettings::default()
    };
    let a = newton_solve(&g.zeros(), &chi, 0.5, &settings)?;
    let guess = random_band_limited(&g, 3, 0.25, 9)?.map(|v| v + 3.0);
    let b = newton_solve(&guess, &chi, 0.5, &settings)?;
    let normalize = |p: &ScalarField| {
        let m = p.mean();
        p.map(|v| v - m)
    };
    let start_gap = normalize(&guess).sup_norm();
    let gap = normalize(a.state.phi()).max_abs_diff(&normalize(b.state.phi()));
    verdict(
        gap < 1e-7 && start_gap > 0.1,
        format!("initial separation {start_gap:.2}, final gap {gap:.1e}"),
    )
}
