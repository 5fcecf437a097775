//! ε-geodesics `(φ̈ − |∂φ̇|²_φ)·det g_φ = ε` between two potentials, and
//! convexity diagnostics of the energy functionals along them.
//!
//! Time `s ∈ [0, 1]` is sampled at `N_t` equispaced slices with the end slices
//! fixed; `φ̈` and `φ̇` are second-order central differences. The discrete
//! system is solved by damped Newton with GMRES, preconditioned by the
//! constant-coefficient operator `c_t ∂²_s + c_x Δ₀` diagonalized by a sine
//! transform in time and the FFT in space.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::functionals::{class_constants, monge_ampere_segment, FunctionalError, Functionals, PathQuadrature};
use crate::grid::{integrate_plain, ScalarField, Spectrum, TorusGrid};
use crate::kahler::{
    assemble, form_on_gradient, gradient_norm_sq, holomorphic_gradient, trace_form, HermitianFormField,
    KahlerError, KahlerState,
};
use crate::krylov::{gmres, GmresSettings};
use crate::mat::{self, MatField};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeodesicError {
    #[error("geodesic precondition failed: {0}")]
    Precondition(String),
    #[error("slice {slice} is not a valid metric: {source}")]
    InvalidSlice { slice: usize, source: KahlerError },
    #[error("no admissible Newton step at iteration {iteration} (residual {residual:.3e})")]
    LineSearch { iteration: usize, residual: f64 },
    #[error("geodesic Newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Kahler(#[from] KahlerError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeodesicSettings {
    /// Sup-norm tolerance on the discrete geodesic residual.
    pub tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub forcing: f64,
    pub max_krylov: usize,
    pub restart: usize,
}

impl Default for GeodesicSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_newton: 30,
            max_halvings: 8,
            forcing: 1e-3,
            max_krylov: 400,
            restart: 80,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub eps: f64,
    /// All `N_t` slices, endpoints included.
    pub slices: Vec<ScalarField>,
    pub residual: f64,
    pub newton_iterations: usize,
}

impl GeodesicPath {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.slices.len() - 1) as f64
    }

    /// `s_j = j/(N_t − 1)`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|j| j as f64 * self.dt()).collect()
    }

    /// Space-time mean of `(1−s)φ₀ + sφ₁ − φ(s)`.
    pub fn mean_deflection(&self) -> f64 {
        let (a, b) = (&self.slices[0], &self.slices[self.len() - 1]);
        let times = self.times();
        let total: f64 = self
            .slices
            .iter()
            .zip(&times)
            .map(|(p, &s)| (a * (1.0 - s)).axpy(s, b).mean() - p.mean())
            .sum();
        total / self.len() as f64
    }

    /// `φ̈` and `φ̇` at interior slice `j`.
    pub fn derivatives(&self, j: usize) -> (ScalarField, ScalarField) {
        let h = self.dt();
        let (prev, cur, next) = (&self.slices[j - 1], &self.slices[j], &self.slices[j + 1]);
        let acc = (&(prev + next) - &(cur * 2.0)) * (1.0 / (h * h));
        let vel = (next - prev) * (0.5 / h);
        (acc, vel)
    }

    /// `(φ̈ − |∂φ̇|²_φ) det g_φ − ε` at interior slice `j`.
    pub fn slice_residual(&self, j: usize) -> Result<ScalarField, KahlerError> {
        let state = assemble(&self.slices[j])?;
        let (acc, vel) = self.derivatives(j);
        let speed = gradient_norm_sq(&state, &vel);
        Ok(acc.zip_map(&speed, |a, s| a - s).mul(state.det()).map(|v| v - self.eps))
    }
}

/// Interior-slice geometry needed by the residual and its Jacobian.
struct SliceGeometry {
    adj: MatField,
    det: ScalarField,
    acc: ScalarField,
    grad: Vec<[Complex64; 2]>,
}

struct System<'a> {
    grid: TorusGrid,
    eps: f64,
    h: f64,
    phi0: &'a ScalarField,
    phi1: &'a ScalarField,
    interior: usize,
}

impl System<'_> {
    fn slice<'b>(&'b self, x: &'b [ScalarField], j: usize) -> &'b ScalarField {
        if j == 0 {
            self.phi0
        } else if j == self.interior + 1 {
            self.phi1
        } else {
            &x[j - 1]
        }
    }

    fn geometry(&self, x: &[ScalarField]) -> Result<Vec<SliceGeometry>, GeodesicError> {
        let n = self.grid.n();
        let h = self.h;
        (1..=self.interior)
            .map(|j| {
                let (prev, cur, next) = (self.slice(x, j - 1), self.slice(x, j), self.slice(x, j + 1));
                let (metric, _) =
                    crate::kahler::metric_of(cur).map_err(|source| GeodesicError::InvalidSlice { slice: j, source })?;
                let adj = metric.map(|g| mat::adjugate(n, g));
                let det = metric.scalar(|g| mat::det(n, g).re);
                let acc = (&(prev + next) - &(cur * 2.0)) * (1.0 / (h * h));
                let grad = holomorphic_gradient(&((next - prev) * (0.5 / h)));
                Ok(SliceGeometry {
                    adj,
                    det,
                    acc,
                    grad,
                })
            })
            .collect()
    }

    fn residual(&self, geo: &[SliceGeometry]) -> Vec<ScalarField> {
        let n = self.grid.n();
        geo.iter()
            .map(|s| {
                let vals = (0..self.grid.len())
                    .map(|p| {
                        let v = &s.grad[p];
                        s.acc.values()[p] * s.det.values()[p] - mat::quad(n, v, s.adj.at(p), v).re - self.eps
                    })
                    .collect();
                ScalarField::new(&self.grid, vals).expect("finite residual")
            })
            .collect()
    }

    /// Jacobian action on interior increments `d` (zero at both ends).
    fn jacobian(&self, geo: &[SliceGeometry], d: &[ScalarField]) -> Vec<ScalarField> {
        let n = self.grid.n();
        let h = self.h;
        let zero = self.grid.zeros();
        let at = |j: usize| if j == 0 || j == self.interior + 1 { &zero } else { &d[j - 1] };
        (1..=self.interior)
            .map(|j| {
                let s = &geo[j - 1];
                let dacc = (&(at(j - 1) + at(j + 1)) - &(at(j) * 2.0)) * (1.0 / (h * h));
                let a = holomorphic_gradient(&((at(j + 1) - at(j - 1)) * (0.5 / h)));
                let w = MatField::complex_hessian(at(j));
                let vals = (0..self.grid.len())
                    .map(|p| {
                        let (v, adj, wp) = (&s.grad[p], s.adj.at(p), w.at(p));
                        let mut out = dacc.values()[p] * s.det.values()[p]
                            + s.acc.values()[p] * mat::trace(n, &mat::mul(n, adj, wp)).re
                            - 2.0 * mat::quad(n, &a[p], adj, v).re;
                        if n == 2 {
                            out -= mat::quad(n, v, &mat::adjugate(n, wp), v).re;
                        }
                        out
                    })
                    .collect();
                ScalarField::new(&self.grid, vals).expect("finite jacobian")
            })
            .collect()
    }
}

/// Inverse of `c_t D_ss + c_x Δ₀` with homogeneous Dirichlet ends in time.
struct Preconditioner {
    grid: TorusGrid,
    sine: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    c_t: f64,
    c_x: f64,
}

impl Preconditioner {
    fn new(grid: &TorusGrid, interior: usize, h: f64, c_t: f64, c_x: f64) -> Self {
        let m1 = (interior + 1) as f64;
        let sine = (0..interior)
            .map(|j| {
                (0..interior)
                    .map(|m| (std::f64::consts::PI * ((j + 1) * (m + 1)) as f64 / m1).sin())
                    .collect()
            })
            .collect();
        let lambda = (0..interior)
            .map(|m| (2.0 - 2.0 * (std::f64::consts::PI * (m + 1) as f64 / m1).cos()) / (h * h))
            .collect();
        Self {
            grid: grid.clone(),
            sine,
            lambda,
            c_t,
            c_x,
        }
    }

    fn apply(&self, r: &[ScalarField]) -> Vec<ScalarField> {
        let m = r.len();
        let spectra: Vec<Spectrum> = r.iter().map(|f| self.grid.spectrum(f)).collect();
        let len = self.grid.len();
        let mut out = vec![vec![Complex64::new(0.0, 0.0); len]; m];
        let mut q = vec![0.0; len];
        self.grid
            .for_each_mode(|flat, k, _| q[flat] = 0.25 * k.iter().map(|v| v * v).sum::<f64>());
        let norm = 2.0 / (m + 1) as f64;
        let mut col = vec![Complex64::new(0.0, 0.0); m];
        for p in 0..len {
            for (mi, c) in col.iter_mut().enumerate() {
                *c = (0..m).map(|j| spectra[j].coeffs()[p] * self.sine[j][mi]).sum();
                *c /= -(self.c_t * self.lambda[mi] + self.c_x * q[p]);
            }
            for (j, o) in out.iter_mut().enumerate() {
                o[p] = (0..m).map(|mi| col[mi] * self.sine[j][mi]).sum::<Complex64>() * norm;
            }
        }
        out.into_iter()
            .map(|c| Spectrum::from_coeffs(&self.grid, c).to_field())
            .collect()
    }
}

fn flatten(fields: &[ScalarField]) -> Vec<f64> {
    fields.iter().flat_map(|f| f.values().iter().copied()).collect()
}

fn unflatten(grid: &TorusGrid, v: &[f64]) -> Result<Vec<ScalarField>, KahlerError> {
    v.chunks(grid.len())
        .map(|c| ScalarField::new(grid, c.to_vec()).map_err(KahlerError::from))
        .collect()
}

fn sup(fields: &[ScalarField]) -> f64 {
    fields.iter().map(ScalarField::sup_norm).fold(0.0, f64::max)
}

/// Solves the discrete ε-geodesic from `phi0` to `phi1` with `n_t` slices.
pub fn solve_geodesic(
    phi0: &ScalarField,
    phi1: &ScalarField,
    eps: f64,
    n_t: usize,
    settings: &GeodesicSettings,
) -> Result<GeodesicPath, GeodesicError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GeodesicError::Precondition(format!("eps must be positive, got {eps}")));
    }
    if n_t < 9 || n_t % 2 == 0 {
        return Err(GeodesicError::Precondition(format!("N_t must be odd and at least 9, got {n_t}")));
    }
    phi0.same_grid(phi1).map_err(KahlerError::from)?;
    assemble(phi0).map_err(|source| GeodesicError::InvalidSlice { slice: 0, source })?;
    assemble(phi1).map_err(|source| GeodesicError::InvalidSlice { slice: n_t - 1, source })?;

    let grid = phi0.grid().clone();
    let h = 1.0 / (n_t - 1) as f64;
    let sys = System {
        grid: grid.clone(),
        eps,
        h,
        phi0,
        phi1,
        interior: n_t - 2,
    };
    // linear interpolation plus the flat-space parabola
    let mut x: Vec<ScalarField> = (1..=sys.interior)
        .map(|j| {
            let s = j as f64 * h;
            (phi0 * (1.0 - s)).axpy(s, phi1).map(|v| v + 0.5 * eps * s * (s - 1.0))
        })
        .collect();
    let mut geo = sys.geometry(&x)?;
    let mut res = sys.residual(&geo);
    let mut r = sup(&res);
    let mut iterations = 0;
    while r > settings.tol {
        if iterations >= settings.max_newton {
            return Err(GeodesicError::NonConvergence { iterations, residual: r });
        }
        let vol = grid.len() as f64 * geo.len() as f64;
        let c_t = geo.iter().map(|s| s.det.values().iter().sum::<f64>()).sum::<f64>() / vol;
        let c_x = (geo.iter().map(|s| s.acc.values().iter().sum::<f64>()).sum::<f64>() / vol).max(eps);
        let pre = Preconditioner::new(&grid, sys.interior, h, c_t, c_x);
        let rhs: Vec<f64> = flatten(&res).iter().map(|v| -v).collect();
        let gm = GmresSettings {
            rel_tol: settings.forcing * r.min(1.0),
            restart: settings.restart,
            max_iter: settings.max_krylov,
        };
        let out = gmres(
            |y| {
                let y = unflatten(&grid, y)?;
                Ok::<_, KahlerError>(flatten(&sys.jacobian(&geo, &pre.apply(&y))))
            },
            &rhs,
            &gm,
        )?;
        let delta = pre.apply(&unflatten(&grid, &out.x)?);

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial: Vec<ScalarField> = x.iter().zip(&delta).map(|(a, d)| a.axpy(lambda, d)).collect();
            if let Ok(g) = sys.geometry(&trial) {
                let rt = sys.residual(&g);
                let st = sup(&rt);
                if st < r {
                    accepted = Some((trial, g, rt, st));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((xt, gt, rt, st)) = accepted else {
            return Err(GeodesicError::LineSearch {
                iteration: iterations,
                residual: r,
            });
        };
        x = xt;
        geo = gt;
        res = rt;
        r = st;
        iterations += 1;
    }
    let mut slices = Vec::with_capacity(n_t);
    slices.push(phi0.clone());
    slices.extend(x);
    slices.push(phi1.clone());
    Ok(GeodesicPath {
        eps,
        slices,
        residual: r,
        newton_iterations: iterations,
    })
}

/// Which functional to profile along a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileFunctional {
    JChi,
    KEnergy,
    Twisted(f64),
}

/// Values of the functional on every slice and the centred second
/// differences `(F_{j+1} − 2F_j + F_{j−1})/Δs²` at interior slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityProfile {
    pub values: Vec<f64>,
    pub second_differences: Vec<f64>,
}

impl ConvexityProfile {
    pub fn min(&self) -> f64 {
        self.second_differences.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn cumulative(path: &GeodesicPath, mut segment: impl FnMut(&ScalarField, &ScalarField) -> Result<f64, FunctionalError>) -> Result<Vec<f64>, FunctionalError> {
    // values relative to the first slice, summed segment by segment
    let mut values = vec![0.0];
    for w in path.slices.windows(2) {
        let last = *values.last().unwrap();
        values.push(last + segment(&w[0], &w[1])?);
    }
    Ok(values)
}

fn second_differences(values: &[f64], h: f64) -> Vec<f64> {
    values
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]) / (h * h))
        .collect()
}

pub fn convexity_profile(
    path: &GeodesicPath,
    chi: &HermitianFormField,
    which: ProfileFunctional,
) -> Result<ConvexityProfile, GeodesicError> {
    let f = Functionals::new(chi)?;
    let values = match which {
        ProfileFunctional::JChi => cumulative(path, |a, b| f.j_chi_segment(a, b))?,
        ProfileFunctional::KEnergy => cumulative(path, |a, b| f.k_energy_segment(a, b))?,
        ProfileFunctional::Twisted(t) => cumulative(path, |a, b| {
            Ok((1.0 - t) * f.j_chi_segment(a, b)? + t * f.k_energy_segment(a, b)?)
        })?,
    };
    Ok(ConvexityProfile {
        second_differences: second_differences(&values, path.dt()),
        values,
    })
}

/// Which normalization of the twisted J functional the identity check uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentityForm {
    /// `J_χ`, first variation `∫φ̇(tr_φχ − χ̄) det g_φ`.
    JChi,
    /// `J⁰ = J_χ + χ̄·I`, first variation `∫φ̇ tr_φχ det g_φ`. In one complex
    /// dimension `tr_φχ·det g_φ = χ`, so `J⁰` is linear and the discrete
    /// identity holds to roundoff.
    Unnormalized,
}

/// Per-slice comparison of the second difference of the selected functional
/// with its closed form
/// `∫ ((φ̈ − |∂φ̇|²_φ)(tr_φχ − c) + χ(∇φ̇,∇φ̇)) det g_φ`, `c = χ̄` or `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub direct: Vec<f64>,
    pub closed_form: Vec<f64>,
    /// `max_j |direct − closed_form| / max_j |closed_form|`.
    pub max_relative_gap: f64,
}

pub fn second_derivative_identity_check(
    path: &GeodesicPath,
    chi: &HermitianFormField,
) -> Result<IdentityCheck, GeodesicError> {
    identity_check(path, chi, IdentityForm::JChi)
}

pub fn identity_check(
    path: &GeodesicPath,
    chi: &HermitianFormField,
    form: IdentityForm,
) -> Result<IdentityCheck, GeodesicError> {
    let f = Functionals::new(chi)?;
    let chi_bar = class_constants(chi)?.chi_bar;
    let quad = PathQuadrature::default();
    let shift = match form {
        IdentityForm::JChi => chi_bar,
        IdentityForm::Unnormalized => 0.0,
    };
    let values = cumulative(path, |a, b| {
        let j = f.j_chi_segment(a, b)?;
        Ok(match form {
            IdentityForm::JChi => j,
            IdentityForm::Unnormalized => j + chi_bar * monge_ampere_segment(a, b, &quad)?,
        })
    })?;
    let direct = second_differences(&values, path.dt());
    let closed_form = (1..path.len() - 1)
        .map(|j| {
            let state: KahlerState = assemble(&path.slices[j])?;
            let (acc, vel) = path.derivatives(j);
            let tr = trace_form(&state, chi)?.map(|v| v - shift);
            let speed = gradient_norm_sq(&state, &vel);
            let twist = form_on_gradient(&state, chi.samples(), &vel);
            let integrand = acc
                .zip_map(&speed, |a, s| a - s)
                .mul(&tr)
                .axpy(1.0, &twist)
                .mul(state.det());
            Ok(integrate_plain(&integrand))
        })
        .collect::<Result<Vec<f64>, KahlerError>>()?;
    let scale = closed_form.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gap = direct
        .iter()
        .zip(&closed_form)
        .fold(0.0f64, |m, (d, c)| m.max((d - c).abs()));
    Ok(IdentityCheck {
        direct,
        closed_form,
        max_relative_gap: if scale > 0.0 { gap / scale } else { gap },
    })
}
