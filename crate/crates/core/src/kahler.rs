//! Pointwise geometry of `ω_φ = ω₀ + i∂∂̄φ` on a flat torus with `g⁰ = I`.
//!
//! Index conventions: the metric matrix is `G[α][β] = g_{αβ̄}`, and
//! `g^{αβ̄} = (G⁻¹)[β][α]`, so traces such as `g^{αβ̄}χ_{αβ̄}` become
//! `tr(G⁻¹X)` in matrix form.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::functionals::ClassConstants;
use crate::grid::{dealias, GridError, ScalarField, TorusGrid};
use crate::mat::{self, Mat, MatField};

/// States whose smallest pointwise metric eigenvalue is at or below this are
/// rejected.
pub const POSITIVITY_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KahlerError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("metric is not positive: smallest eigenvalue {min_eigenvalue:.3e}")]
    InvalidMetric { min_eigenvalue: f64 },
    #[error("twist form constant part is not Hermitian (entry ({row},{col}))")]
    NotHermitian { row: usize, col: usize },
    #[error("twist form is not positive: smallest eigenvalue {min_eigenvalue:.3e}")]
    NotPositive { min_eigenvalue: f64 },
    #[error("degree k = {k} out of range 1..={n}")]
    DegreeOutOfRange { k: usize, n: usize },
    #[error("t = {0} outside [0, 1]")]
    TimeOutOfRange(f64),
}

/// Twist form `χ = χ_H + i∂∂̄ψ` with `χ_H` a constant Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianFormField {
    constant: Mat,
    potential: ScalarField,
    samples: MatField,
}

impl HermitianFormField {
    pub fn new(constant: Mat, potential: ScalarField) -> Result<Self, KahlerError> {
        let grid = potential.grid().clone();
        let n = grid.n();
        potential.check_finite()?;
        for i in 0..n {
            for j in 0..n {
                if (constant[i][j] - constant[j][i].conj()).norm() > 1e-14 {
                    return Err(KahlerError::NotHermitian { row: i, col: j });
                }
            }
        }
        let hess = MatField::complex_hessian(&potential);
        let samples = hess.map(|h| mat::add(n, &constant, h));
        Ok(Self {
            constant,
            potential,
            samples,
        })
    }

    /// `χ = ω₀`.
    pub fn identity(grid: &TorusGrid) -> Self {
        Self::new(mat::identity(grid.n()), grid.zeros()).expect("identity is Hermitian")
    }

    pub fn constant_form(grid: &TorusGrid, constant: Mat) -> Result<Self, KahlerError> {
        Self::new(constant, grid.zeros())
    }

    pub fn grid(&self) -> &TorusGrid {
        self.potential.grid()
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn samples(&self) -> &MatField {
        &self.samples
    }

    pub fn scaled(&self, c: f64) -> Self {
        let n = self.grid().n();
        Self::new(mat::scale(n, &self.constant, c), &self.potential * c)
            .expect("scaling keeps Hermitian symmetry")
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.samples.min_eigenvalue()
    }

    pub fn require_positive(&self) -> Result<(), KahlerError> {
        let min_eigenvalue = self.min_eigenvalue();
        if min_eigenvalue > 0.0 {
            Ok(())
        } else {
            Err(KahlerError::NotPositive { min_eigenvalue })
        }
    }

    /// Smallest eigenvalue of the constant part.
    pub fn constant_min_eigenvalue(&self) -> f64 {
        mat::min_eigenvalue(self.grid().n(), &self.constant)
    }
}

/// `ω_φ` with cached metric, inverse, determinant and curvature.
#[derive(Clone, Debug)]
pub struct KahlerState {
    phi: ScalarField,
    metric: MatField,
    inverse: MatField,
    det: ScalarField,
    min_eigenvalue: f64,
    curvature: OnceLock<Curvature>,
}

#[derive(Clone, Debug)]
struct Curvature {
    log_det: ScalarField,
    ricci: MatField,
    scalar: ScalarField,
}

/// Metric `G = I + ∂∂̄φ` only, with its smallest eigenvalue.
pub fn metric_of(phi: &ScalarField) -> Result<(MatField, f64), KahlerError> {
    phi.check_finite()?;
    let n = phi.grid().n();
    let id = mat::identity(n);
    let metric = MatField::complex_hessian(phi).map(|h| mat::add(n, &id, h));
    let min_eigenvalue = metric.min_eigenvalue();
    if !(min_eigenvalue > POSITIVITY_THRESHOLD) {
        return Err(KahlerError::InvalidMetric { min_eigenvalue });
    }
    Ok((metric, min_eigenvalue))
}

/// Builds the full geometric state of `φ`.
pub fn assemble(phi: &ScalarField) -> Result<KahlerState, KahlerError> {
    let (metric, min_eigenvalue) = metric_of(phi)?;
    Ok(state_from_metric(phi.clone(), metric, min_eigenvalue))
}

/// State of `φ` from an already computed `G = I + ∂∂̄φ`.
pub(crate) fn assemble_with_metric(phi: ScalarField, metric: MatField) -> Result<KahlerState, KahlerError> {
    phi.check_finite()?;
    let min_eigenvalue = metric.min_eigenvalue();
    if !(min_eigenvalue > POSITIVITY_THRESHOLD) {
        return Err(KahlerError::InvalidMetric { min_eigenvalue });
    }
    Ok(state_from_metric(phi, metric, min_eigenvalue))
}

fn state_from_metric(phi: ScalarField, metric: MatField, min_eigenvalue: f64) -> KahlerState {
    let n = phi.grid().n();
    let inverse = metric.map(|g| mat::inverse(n, g));
    let det = metric.scalar(|g| mat::det(n, g).re);
    KahlerState {
        phi,
        metric,
        inverse,
        det,
        min_eigenvalue,
        curvature: OnceLock::new(),
    }
}

fn contract_trace(inverse: &MatField, x: &MatField) -> ScalarField {
    let n = inverse.n();
    let vals = inverse
        .data()
        .iter()
        .zip(x.data())
        .map(|(h, m)| mat::trace(n, &mat::mul(n, h, m)).re)
        .collect();
    ScalarField::from_raw(inverse.grid(), vals)
}

impl KahlerState {
    pub fn grid(&self) -> &TorusGrid {
        self.phi.grid()
    }

    pub fn n(&self) -> usize {
        self.grid().n()
    }

    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }

    pub fn metric(&self) -> &MatField {
        &self.metric
    }

    pub fn inverse(&self) -> &MatField {
        &self.inverse
    }

    /// `det g_φ`, the density of `ω_φ^n` against the coordinate measure.
    pub fn det(&self) -> &ScalarField {
        &self.det
    }

    // Curvature is computed on first use.
    fn curvature(&self) -> &Curvature {
        self.curvature.get_or_init(|| {
            let n = self.n();
            // log det feeds a differentiation; truncate its aliased tail
            let log_det = dealias(&self.det.map(f64::ln));
            let ricci = MatField::complex_hessian(&log_det).map(|h| mat::scale(n, h, -1.0));
            let scalar = contract_trace(&self.inverse, &ricci);
            Curvature {
                log_det,
                ricci,
                scalar,
            }
        })
    }

    /// Dealiased `log det g_φ`.
    pub fn log_det(&self) -> &ScalarField {
        &self.curvature().log_det
    }

    pub fn ricci(&self) -> &MatField {
        &self.curvature().ricci
    }

    pub fn scalar(&self) -> &ScalarField {
        &self.curvature().scalar
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// `∫ u v det g_φ`.
    pub fn weighted_dot(&self, u: &ScalarField, v: &ScalarField) -> f64 {
        let s: f64 = u
            .values()
            .iter()
            .zip(v.values())
            .zip(self.det.values())
            .map(|((a, b), w)| a * b * w)
            .sum();
        s * self.grid().cell_volume()
    }

    /// `∫ det g_φ`.
    pub fn volume(&self) -> f64 {
        self.det.values().iter().sum::<f64>() * self.grid().cell_volume()
    }
}

/// `R_φ = g^{αβ̄} R_{αβ̄}` with `R_{αβ̄} = −∂_α∂_β̄ log det g_φ`.
pub fn scalar_curvature(state: &KahlerState) -> &ScalarField {
    state.scalar()
}

/// `tr_φ χ = g^{αβ̄} χ_{αβ̄}`.
pub fn trace_form(state: &KahlerState, chi: &HermitianFormField) -> Result<ScalarField, KahlerError> {
    if state.grid() != chi.grid() {
        return Err(GridError::GridMismatch.into());
    }
    Ok(contract_trace(&state.inverse, chi.samples()))
}

/// `Δ_φ u = g^{αβ̄} u_{,αβ̄}`.
pub fn metric_laplacian(state: &KahlerState, u: &ScalarField) -> Result<ScalarField, KahlerError> {
    u.same_grid(state.phi())?;
    u.check_finite()?;
    Ok(contract_trace(&state.inverse, &MatField::complex_hessian(u)))
}

/// `⟨a, b⟩_φ = g^{αδ̄} g^{γβ̄} a_{αβ̄} b_{γδ̄} = tr(G⁻¹ a G⁻¹ b)` (real part).
pub fn form_inner(state: &KahlerState, a: &MatField, b: &MatField) -> ScalarField {
    let n = state.n();
    let vals = state
        .inverse
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(h, (x, y))| {
            let left = mat::mul(n, h, x);
            let right = mat::mul(n, h, y);
            mat::trace(n, &mat::mul(n, &left, &right)).re
        })
        .collect();
    ScalarField::from_raw(state.grid(), vals)
}

/// Pointwise `(∂_{z_1} u, …, ∂_{z_n} u)`.
pub fn holomorphic_gradient(u: &ScalarField) -> Vec<[Complex64; 2]> {
    let grid = u.grid();
    let spec = grid.spectrum(u);
    let mut out = vec![[Complex64::new(0.0, 0.0); 2]; grid.len()];
    for a in 0..grid.n() {
        let (re, im) = spec.dz(a);
        for (p, v) in out.iter_mut().enumerate() {
            v[a] = Complex64::new(re.values()[p], im.values()[p]);
        }
    }
    out
}

/// `|∂u|²_φ = g^{αβ̄} u_{,α} u_{,β̄}`.
pub fn gradient_norm_sq(state: &KahlerState, u: &ScalarField) -> ScalarField {
    let n = state.n();
    let grad = holomorphic_gradient(u);
    let vals = grad
        .iter()
        .zip(state.inverse.data())
        .map(|(v, h)| mat::quad(n, v, h, v).re)
        .collect();
    ScalarField::from_raw(state.grid(), vals)
}

/// Real part of `g^{αβ̄} u_{,α} f_{,β̄}`.
pub fn gradient_pairing(state: &KahlerState, u: &ScalarField, f: &ScalarField) -> ScalarField {
    let n = state.n();
    let gu = holomorphic_gradient(u);
    let gf = holomorphic_gradient(f);
    let vals = gu
        .iter()
        .zip(&gf)
        .zip(state.inverse.data())
        .map(|((a, b), h)| mat::quad(n, b, h, a).re)
        .collect();
    ScalarField::from_raw(state.grid(), vals)
}

/// `χ(∇u, ∇u) = χ_{αβ̄} u^{,α} u^{,β̄}` with indices raised by `g_φ`.
pub fn form_on_gradient(state: &KahlerState, chi: &MatField, u: &ScalarField) -> ScalarField {
    let n = state.n();
    let grad = holomorphic_gradient(u);
    let vals = grad
        .iter()
        .zip(state.inverse.data().iter().zip(chi.data()))
        .map(|(v, (h, x))| {
            let hxh = mat::mul(n, &mat::mul(n, h, x), h);
            mat::quad(n, v, &hxh, v).re
        })
        .collect();
    ScalarField::from_raw(state.grid(), vals)
}

/// Christoffel symbols `Γ^γ_{αβ} = g^{γδ̄} ∂_α g_{βδ̄}`, indexed `[γ][α][β]`.
pub fn christoffel(state: &KahlerState) -> Vec<[[[Complex64; 2]; 2]; 2]> {
    let grid = state.grid();
    let n = grid.n();
    let spec = grid.spectrum(state.phi());
    // third derivatives ∂_α ∂_β ∂_δ̄ φ
    let mut third = vec![[[[Complex64::new(0.0, 0.0); 2]; 2]; 2]; grid.len()];
    for a in 0..n {
        for b in a..n {
            for d in 0..n {
                let (re, im) = spec.wirtinger(&[(a, false), (b, false), (d, true)]);
                for (p, t) in third.iter_mut().enumerate() {
                    let z = Complex64::new(re.values()[p], im.values()[p]);
                    t[a][b][d] = z;
                    t[b][a][d] = z;
                }
            }
        }
    }
    third
        .iter()
        .zip(state.inverse.data())
        .map(|(t, h)| {
            let mut gamma = [[[Complex64::new(0.0, 0.0); 2]; 2]; 2];
            for c in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        for d in 0..n {
                            // g^{γδ̄} = H[δ][γ]
                            gamma[c][a][b] += h[d][c] * t[a][b][d];
                        }
                    }
                }
            }
            gamma
        })
        .collect()
}

/// Covariant (0,2) Hessian `u_{,ᾱβ̄} = ∂_ᾱ∂_β̄u − Γ̄^γ̄_{ᾱβ̄} ∂_γ̄u`, stored as
/// a symmetric matrix field indexed `[α][β]`.
pub fn covariant_hessian_02(state: &KahlerState, u: &ScalarField) -> Result<MatField, KahlerError> {
    u.same_grid(state.phi())?;
    u.check_finite()?;
    let grid = state.grid();
    let n = grid.n();
    let spec = grid.spectrum(u);
    let mut out = vec![mat::ZERO; grid.len()];
    for a in 0..n {
        for b in a..n {
            let (re, im) = spec.wirtinger(&[(a, false), (b, false)]);
            for (p, m) in out.iter_mut().enumerate() {
                let z = Complex64::new(re.values()[p], im.values()[p]);
                m[a][b] = z;
                m[b][a] = z;
            }
        }
    }
    let gamma = christoffel(state);
    let grad = holomorphic_gradient(u);
    for ((m, g), v) in out.iter_mut().zip(&gamma).zip(&grad) {
        for a in 0..n {
            for b in 0..n {
                let mut corr = Complex64::new(0.0, 0.0);
                for c in 0..n {
                    corr += g[c][a][b] * v[c];
                }
                m[a][b] -= corr;
            }
        }
        // (0,2) tensor is the conjugate of the (2,0) one for real u
        for row in m.iter_mut().take(n) {
            for z in row.iter_mut().take(n) {
                *z = z.conj();
            }
        }
    }
    Ok(MatField::from_vec(grid, out))
}

/// `|A|²_φ` for a symmetric (0,2) tensor, `g^{αγ̄} g^{βδ̄} A_{ᾱβ̄} conj(A_{γ̄δ̄})`.
pub fn tensor_norm_sq(state: &KahlerState, a: &MatField) -> ScalarField {
    let n = state.n();
    let vals = a
        .data()
        .iter()
        .zip(state.inverse.data())
        .map(|(t, h)| {
            // A_{αβ} = conj of stored (0,2) entries; contract with H on both slots
            let mut s = 0.0;
            for al in 0..n {
                for be in 0..n {
                    for ga in 0..n {
                        for de in 0..n {
                            let w = h[ga][al] * h[de][be];
                            s += (w * t[al][be].conj() * t[ga][de]).re;
                        }
                    }
                }
            }
            s
        })
        .collect();
    ScalarField::from_raw(state.grid(), vals)
}

/// `F¹(φ,t) = t(R_φ − R̄) − (1−t)(tr_φχ − χ̄)`.
pub fn residual_twisted(
    state: &KahlerState,
    chi: &HermitianFormField,
    constants: &ClassConstants,
    t: f64,
) -> Result<ScalarField, KahlerError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(KahlerError::TimeOutOfRange(t));
    }
    let tr = trace_form(state, chi)?;
    let (rb, cb) = (constants.r_bar, constants.chi_bar);
    Ok(state
        .scalar()
        .zip_map(&tr, |r, x| t * (r - rb) - (1.0 - t) * (x - cb)))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `n·(χ^k ∧ ω_φ^{n−k}) / (C(n,k)·ω_φ^n)`, i.e. `(n / C(n,k))·e_k(G⁻¹X)`.
/// For `k = 1` this is `tr_φ χ`; for `k = n` it is `n·det χ / det g_φ`.
pub fn jmu_density(
    state: &KahlerState,
    chi: &HermitianFormField,
    k: usize,
) -> Result<ScalarField, KahlerError> {
    let n = state.n();
    if k == 0 || k > n {
        return Err(KahlerError::DegreeOutOfRange { k, n });
    }
    if state.grid() != chi.grid() {
        return Err(GridError::GridMismatch.into());
    }
    if k == 1 {
        return trace_form(state, chi);
    }
    let scale = n as f64 / binomial(n, k);
    let vals = chi
        .samples()
        .data()
        .iter()
        .zip(state.det.values())
        .map(|(x, d)| scale * mat::det(n, x).re / d)
        .collect();
    Ok(ScalarField::from_raw(state.grid(), vals))
}

/// Euler–Lagrange residual of `J_{χ^k}`: `jmu_density − c_k`.
pub fn residual_jmu(
    state: &KahlerState,
    chi: &HermitianFormField,
    constants: &ClassConstants,
    k: usize,
) -> Result<ScalarField, KahlerError> {
    let ck = constants.c_k(k).ok_or(KahlerError::DegreeOutOfRange { k, n: state.n() })?;
    Ok(jmu_density(state, chi, k)?.map(|v| v - ck))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::class_constants;
    use crate::grid::{integrate_plain, random_band_limited};

    fn grid1(s: usize) -> TorusGrid {
        TorusGrid::uniform(1, s).unwrap()
    }

    #[test]
    fn flat_state() {
        let g = grid1(16);
        let s = assemble(&g.zeros()).unwrap();
        assert!(s.det().values().iter().all(|&d| (d - 1.0).abs() < 1e-15));
        assert!(s.scalar().sup_norm() < 1e-15);
        assert_eq!(s.min_eigenvalue(), 1.0);
    }

    #[test]
    fn cosine_potential_n1() {
        let g = grid1(64);
        let a = 0.4;
        let s = assemble(&g.field_from_fn(|x| a * x[0].cos())).unwrap();
        let exact = g.field_from_fn(|x| 1.0 - 0.25 * a * x[0].cos());
        let e0 = s.det().max_abs_diff(&exact);
        assert!(e0 < 1e-13, "det err {e0}");

        // R = −(1/g)·¼ ∂²_x log g, with (log g)'' = (g g'' − g'²)/g²
        let r_exact = g.field_from_fn(|x| {
            let c = 0.25 * a;
            let gg = 1.0 - c * x[0].cos();
            let g1 = c * x[0].sin();
            let g2 = c * x[0].cos();
            -(gg * g2 - g1 * g1) / (gg * gg) / (4.0 * gg)
        });
        let err = s.scalar().max_abs_diff(&r_exact);
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn large_amplitude_is_invalid() {
        let g = grid1(16);
        let err = assemble(&g.field_from_fn(|x| 5.0 * x[0].cos())).unwrap_err();
        assert!(matches!(err, KahlerError::InvalidMetric { min_eigenvalue } if (min_eigenvalue + 0.25).abs() < 1e-12));
    }

    #[test]
    fn traces_at_flat_state() {
        let g = grid1(8);
        let s = assemble(&g.zeros()).unwrap();
        let tr = trace_form(&s, &HermitianFormField::identity(&g)).unwrap();
        assert!(tr.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let g2 = TorusGrid::uniform(2, 8).unwrap();
        let s2 = assemble(&g2.zeros()).unwrap();
        let chi = HermitianFormField::constant_form(&g2, mat::diag(&[2.0, 3.0])).unwrap();
        let tr = trace_form(&s2, &chi).unwrap();
        assert!(tr.values().iter().all(|&v| (v - 5.0).abs() < 1e-15));
    }

    #[test]
    fn trace_n1_is_direct_inverse() {
        let g = grid1(32);
        let phi = random_band_limited(&g, 3, 0.2, 4).unwrap();
        let s = assemble(&phi).unwrap();
        let tr = trace_form(&s, &HermitianFormField::identity(&g)).unwrap();
        let (h, _) = crate::grid::complex_second(&phi, 0, 0).unwrap();
        let exact = h.map(|v| 1.0 / (1.0 + v));
        assert!(tr.max_abs_diff(&exact) < 1e-14);
    }

    #[test]
    fn laplacian_examples() {
        let g = grid1(16);
        let s = assemble(&g.zeros()).unwrap();
        let u = g.field_from_fn(|x| x[0].cos());
        let lap = metric_laplacian(&s, &u).unwrap();
        let e0 = lap.max_abs_diff(&(&u * -0.25));
        assert!(e0 < 1e-13, "lap err {e0}");
        assert!(metric_laplacian(&s, &g.constant(2.0)).unwrap().sup_norm() < 1e-14);

        for n in 1..=2 {
            let g = TorusGrid::uniform(n, if n == 1 { 32 } else { 8 }).unwrap();
            let s = assemble(&random_band_limited(&g, 2, 0.2, 7).unwrap()).unwrap();
            let u = random_band_limited(&g, 3, 1.0, 8).unwrap();
            let lap = metric_laplacian(&s, &u).unwrap();
            let one = g.constant(1.0);
            assert!(s.weighted_dot(&lap, &one).abs() < 1e-10);
        }
    }

    #[test]
    fn curvature_identity_and_total_curvature() {
        let g = grid1(64);
        let phi = random_band_limited(&g, 3, 0.1, 21).unwrap();
        let s = assemble(&phi).unwrap();
        let raw_log = s.det().map(f64::ln);
        let lap = metric_laplacian(&s, &raw_log).unwrap();
        let e0 = (s.scalar() + &lap).sup_norm();
        assert!(e0 < 1e-8, "identity err {e0}");
        assert!(s.weighted_dot(s.scalar(), &g.constant(1.0)).abs() < 1e-10);
    }

    #[test]
    fn volume_and_class_invariance() {
        for (n, size) in [(1, 32), (2, 8)] {
            let g = TorusGrid::uniform(n, size).unwrap();
            let psi = random_band_limited(&g, 2, 0.1, 3).unwrap();
            let chi = HermitianFormField::new(mat::diag(&[2.0, 3.0][..n]), psi).unwrap();
            let s0 = assemble(&g.zeros()).unwrap();
            let base_tr = integrate_plain(&trace_form(&s0, &chi).unwrap());
            for seed in 0..3 {
                let s = assemble(&random_band_limited(&g, 2, 0.15, seed).unwrap()).unwrap();
                assert!((s.volume() / g.volume() - 1.0).abs() < 1e-12);
                let tr = trace_form(&s, &chi).unwrap();
                let class = integrate_plain(&tr.mul(s.det()));
                assert!((class / base_tr - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_specialisations() {
        let g = grid1(32);
        let chi = HermitianFormField::identity(&g);
        let c = class_constants(&chi).unwrap();
        let flat = assemble(&g.zeros()).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert!(residual_twisted(&flat, &chi, &c, t).unwrap().sup_norm() < 1e-15);
        }
        let s = assemble(&random_band_limited(&g, 3, 0.2, 1).unwrap()).unwrap();
        let tr = trace_form(&s, &chi).unwrap();
        let r0 = residual_twisted(&s, &chi, &c, 0.0).unwrap();
        assert!(r0.max_abs_diff(&tr.map(|v| 1.0 - v)) < 1e-15);
        let r1 = residual_twisted(&s, &chi, &c, 1.0).unwrap();
        assert!(r1.max_abs_diff(s.scalar()) < 1e-15);
        let jm = residual_jmu(&s, &chi, &c, 1).unwrap();
        assert!(jm.max_abs_diff(&(-&r0)) < 1e-15);
        assert!(residual_twisted(&s, &chi, &c, 1.5).is_err());
        assert!(residual_jmu(&s, &chi, &c, 2).is_err());
    }

    #[test]
    fn residual_mean_zero() {
        let g = grid1(32);
        let psi = random_band_limited(&g, 2, 0.3, 5).unwrap();
        let chi = HermitianFormField::new(mat::identity(1), psi).unwrap();
        let c = class_constants(&chi).unwrap();
        let s = assemble(&random_band_limited(&g, 3, 0.3, 6).unwrap()).unwrap();
        let one = g.constant(1.0);
        for t in [0.0, 0.5, 1.0] {
            let f = residual_twisted(&s, &chi, &c, t).unwrap();
            assert!(s.weighted_dot(&f, &one).abs() < 1e-9);
        }
    }

    #[test]
    fn jmu_top_degree_n2() {
        let g = TorusGrid::uniform(2, 8).unwrap();
        let chi = HermitianFormField::identity(&g);
        let c = class_constants(&chi).unwrap();
        let flat = assemble(&g.zeros()).unwrap();
        assert!(residual_jmu(&flat, &chi, &c, 2).unwrap().sup_norm() < 1e-15);
        let one = g.constant(1.0);
        for seed in 0..3 {
            let s = assemble(&random_band_limited(&g, 2, 0.2, seed).unwrap()).unwrap();
            let r = residual_jmu(&s, &chi, &c, 2).unwrap();
            assert!(s.weighted_dot(&r, &one).abs() < 1e-9);
        }
    }

    #[test]
    fn hermitian_outputs() {
        let g = TorusGrid::uniform(2, 8).unwrap();
        let s = assemble(&random_band_limited(&g, 2, 0.2, 2).unwrap()).unwrap();
        assert!(s.metric().hermitian_defect() < 1e-11);
        assert!(s.ricci().hermitian_defect() < 1e-11);
        let u = random_band_limited(&g, 3, 1.0, 3).unwrap();
        let h = covariant_hessian_02(&s, &u).unwrap();
        assert!(h.symmetry_defect() < 1e-11);
    }

    #[test]
    fn covariant_hessian_flat_and_constant() {
        let g = grid1(16);
        let s = assemble(&random_band_limited(&g, 2, 0.3, 2).unwrap()).unwrap();
        assert!(covariant_hessian_02(&s, &g.constant(4.0)).unwrap().sup_norm() < 1e-13);

        let flat = assemble(&g.zeros()).unwrap();
        let u = g.field_from_fn(|x| (x[0] + 2.0 * x[1]).sin());
        let h = covariant_hessian_02(&flat, &u).unwrap();
        // ∂_z̄∂_z̄ u = ¼(u_xx − u_yy + 2i u_xy) = ¼(−1 + 4 − 4i)·sin(...)
        let expect_re = &u * 0.75;
        let expect_im = &u * -1.0;
        let (re, im) = h.entry(0, 0);
        assert!(re.max_abs_diff(&expect_re) < 1e-13);
        assert!(im.max_abs_diff(&expect_im) < 1e-13);
    }

    #[test]
    fn covariant_hessian_n1_symbolic() {
        // n = 1, φ = a cos x: g = 1 − (a/4) cos x, Γ = g⁻¹ ∂_z g with ∂_z g = (a/8) sin x.
        // For u = cos x: ∂_z∂_z u = −¼ cos x, ∂_z u = −½ sin x.
        let g = grid1(32);
        let a = 0.4;
        let s = assemble(&g.field_from_fn(|x| a * x[0].cos())).unwrap();
        let u = g.field_from_fn(|x| x[0].cos());
        let h = covariant_hessian_02(&s, &u).unwrap();
        let exact = g.field_from_fn(|x| {
            let gg = 1.0 - 0.25 * a * x[0].cos();
            let gamma = (a / 8.0) * x[0].sin() / gg;
            -0.25 * x[0].cos() - gamma * (-0.5 * x[0].sin())
        });
        let (re, im) = h.entry(0, 0);
        assert!(re.max_abs_diff(&exact) < 1e-13);
        assert!(im.sup_norm() < 1e-13);
    }
}
