//! Linearization of the twisted residual and its diagnostic probes.
//!
//! `𝓛u = −tΔ_φ(P Δ_φ u) − ⟨∂∂̄u, tRic_φ − (1−t)χ⟩_φ`, where `P` is the same
//! dealiasing projection applied to `log det g_φ` when forming `R_φ`, so that
//! `𝓛` is the exact derivative of the discrete residual.

use crate::grid::{dealias, project_mean_zero, random_band_limited, ScalarField, TorusGrid};
use crate::kahler::{
    covariant_hessian_02, form_inner, form_on_gradient, gradient_norm_sq, gradient_pairing,
    metric_laplacian, tensor_norm_sq, trace_form, HermitianFormField, KahlerError, KahlerState,
};
use crate::mat::{self, MatField};

#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    state: KahlerState,
    chi: HermitianFormField,
    t: f64,
    eta: MatField,
}

impl LinearizedOperator {
    pub fn new(state: KahlerState, chi: &HermitianFormField, t: f64) -> Result<Self, KahlerError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(KahlerError::TimeOutOfRange(t));
        }
        if state.grid() != chi.grid() {
            return Err(crate::grid::GridError::GridMismatch.into());
        }
        let n = state.n();
        let twist = chi.samples().map(|x| mat::scale(n, x, t - 1.0));
        // t = 0 needs no curvature
        let eta = if t > 0.0 {
            state
                .ricci()
                .zip_map(&twist, |r, x| mat::add(n, &mat::scale(n, r, t), x))
        } else {
            twist
        };
        Ok(Self {
            state,
            chi: chi.clone(),
            t,
            eta,
        })
    }

    pub fn state(&self) -> &KahlerState {
        &self.state
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn apply(&self, u: &ScalarField) -> Result<ScalarField, KahlerError> {
        let hess = MatField::complex_hessian(u);
        u.same_grid(self.state.phi())?;
        let second = form_inner(&self.state, &hess, &self.eta);
        if self.t == 0.0 {
            return Ok(-&second);
        }
        let lap = dealias(&metric_laplacian(&self.state, u)?);
        let bilap = metric_laplacian(&self.state, &lap)?;
        Ok(bilap.zip_map(&second, |b, s| -self.t * b - s))
    }

    /// `∫ u v det g_φ`.
    pub fn pairing(&self, u: &ScalarField, v: &ScalarField) -> f64 {
        pairing(&self.state, u, v)
    }

    /// Right-hand side of the integration-by-parts identity
    /// `∫u𝓛u = ∫(−t|u_{,ᾱβ̄}|² − (1−t)χ(∇u,∇u) + Re(u^{,α} f_{,α})u) det g_φ`
    /// with `f = tR_φ − (1−t)tr_φχ`.
    pub fn energy_identity(&self, u: &ScalarField) -> Result<f64, KahlerError> {
        let t = self.t;
        let s = &self.state;
        let tr = trace_form(s, &self.chi)?;
        let f = if t > 0.0 {
            s.scalar().zip_map(&tr, |r, x| t * r - (1.0 - t) * x)
        } else {
            tr.map(|x| -x)
        };
        let hess = covariant_hessian_02(s, u)?;
        let hess_sq = tensor_norm_sq(s, &hess);
        let chi_grad = form_on_gradient(s, self.chi.samples(), u);
        let cross = gradient_pairing(s, u, &f).mul(u);
        let integrand = hess_sq
            .zip_map(&chi_grad, |h, c| -t * h - (1.0 - t) * c)
            .axpy(1.0, &cross);
        Ok(s.weighted_dot(&integrand, &s.grid().constant(1.0)))
    }

    /// `sup |⟨𝓛u,v⟩ − ⟨u,𝓛v⟩| / (‖u‖‖v‖)` over the probe basis.
    pub fn self_adjoint_defect(&self, max_mode: usize, samples: usize, seed: u64) -> Result<f64, KahlerError> {
        let basis = probe_basis(self.state.grid(), max_mode, samples, seed)?;
        let images = basis.iter().map(|u| self.apply(u)).collect::<Result<Vec<_>, _>>()?;
        let norms: Vec<f64> = basis.iter().map(|u| self.pairing(u, u).sqrt()).collect();
        let mut defect: f64 = 0.0;
        for i in 0..basis.len() {
            for j in (i + 1)..basis.len() {
                let gap = self.pairing(&images[i], &basis[j]) - self.pairing(&basis[i], &images[j]);
                defect = defect.max(gap.abs() / (norms[i] * norms[j]));
            }
        }
        Ok(defect)
    }

    /// `inf −⟨u,𝓛u⟩ / ∫|∂u|²_φ` over mean-zero probes.
    pub fn coercivity_probe(&self, max_mode: usize, samples: usize, seed: u64) -> Result<f64, KahlerError> {
        self.probe_min(max_mode, samples, seed, |s, u| {
            s.weighted_dot(&gradient_norm_sq(s, u), &s.grid().constant(1.0))
        })
    }

    /// `inf −⟨u,𝓛u⟩ / ⟨u,u⟩` over mean-zero probes; positive iff no
    /// probe falls in the kernel.
    pub fn rayleigh_probe(&self, max_mode: usize, samples: usize, seed: u64) -> Result<f64, KahlerError> {
        self.probe_min(max_mode, samples, seed, |s, u| s.weighted_dot(u, u))
    }

    fn probe_min(
        &self,
        max_mode: usize,
        samples: usize,
        seed: u64,
        denom: impl Fn(&KahlerState, &ScalarField) -> f64,
    ) -> Result<f64, KahlerError> {
        let basis = probe_basis(self.state.grid(), max_mode, samples, seed)?;
        let mut best = f64::INFINITY;
        for u in &basis {
            let u = project_mean_zero(u, self.state.det())?;
            let num = -self.pairing(&u, &self.apply(&u)?);
            best = best.min(num / denom(&self.state, &u));
        }
        Ok(best)
    }
}

pub fn pairing(state: &KahlerState, u: &ScalarField, v: &ScalarField) -> f64 {
    state.weighted_dot(u, v)
}

/// `cos(k x_a)`, `sin(k x_a)` for every real axis and `k = 1..=max_mode`,
/// followed by `samples` seeded band-limited fields.
pub fn probe_basis(
    grid: &TorusGrid,
    max_mode: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<ScalarField>, KahlerError> {
    let mut out = Vec::new();
    for axis in 0..grid.real_dim() {
        let top = max_mode.min((grid.sizes()[axis] - 1) / 2);
        for k in 1..=top {
            let k = k as f64;
            out.push(grid.field_from_fn(|x| (k * x[axis]).cos()));
            out.push(grid.field_from_fn(|x| (k * x[axis]).sin()));
        }
    }
    for i in 0..samples as u64 {
        out.push(random_band_limited(grid, max_mode.max(1), 1.0, seed.wrapping_add(i))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::class_constants;
    use crate::kahler::{assemble, residual_twisted};

    fn grid1(s: usize) -> TorusGrid {
        TorusGrid::uniform(1, s).unwrap()
    }

    fn flat(g: &TorusGrid, t: f64) -> LinearizedOperator {
        LinearizedOperator::new(assemble(&g.zeros()).unwrap(), &HermitianFormField::identity(g), t).unwrap()
    }

    #[test]
    fn flat_symbol_example() {
        let g = grid1(32);
        let u = g.field_from_fn(|x| x[0].cos());
        let lu = flat(&g, 0.5).apply(&u).unwrap();
        assert!(lu.max_abs_diff(&(&u * (-5.0 / 32.0))) < 1e-13);
        // t = 0 keeps only the second-order part
        let lu = flat(&g, 0.0).apply(&u).unwrap();
        assert!(lu.max_abs_diff(&(&u * -0.25)) < 1e-13);
    }

    #[test]
    fn constants_and_linearity() {
        let g = grid1(32);
        let psi = random_band_limited(&g, 2, 0.2, 1).unwrap();
        let chi = HermitianFormField::new(mat::identity(1), psi).unwrap();
        let s = assemble(&random_band_limited(&g, 3, 0.2, 2).unwrap()).unwrap();
        let op = LinearizedOperator::new(s, &chi, 0.3).unwrap();
        assert!(op.apply(&g.constant(3.0)).unwrap().sup_norm() < 1e-10);
        let u = random_band_limited(&g, 3, 1.0, 3).unwrap();
        let v = random_band_limited(&g, 3, 1.0, 4).unwrap();
        let lhs = op.apply(&(&u * 2.0).axpy(-0.5, &v)).unwrap();
        let rhs = (&op.apply(&u).unwrap() * 2.0).axpy(-0.5, &op.apply(&v).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-10 * (u.sup_norm() + v.sup_norm()));
    }

    #[test]
    fn frechet_derivative_order() {
        let g = grid1(32);
        let psi = random_band_limited(&g, 2, 0.2, 11).unwrap();
        let chi = HermitianFormField::new(mat::diag(&[1.2]), psi).unwrap();
        let consts = class_constants(&chi).unwrap();
        let phi = random_band_limited(&g, 3, 0.2, 12).unwrap();
        let u = random_band_limited(&g, 3, 1.0, 13).unwrap();
        for t in [0.0, 0.3, 0.7, 1.0] {
            let op = LinearizedOperator::new(assemble(&phi).unwrap(), &chi, t).unwrap();
            let lu = op.apply(&u).unwrap();
            let err = |h: f64| {
                let plus = residual_twisted(&assemble(&phi.axpy(h, &u)).unwrap(), &chi, &consts, t).unwrap();
                let minus = residual_twisted(&assemble(&phi.axpy(-h, &u)).unwrap(), &chi, &consts, t).unwrap();
                (&(&plus - &minus) * (0.5 / h)).max_abs_diff(&lu)
            };
            let (e1, e2) = (err(1e-2), err(1e-3));
            let order = (e1 / e2).log10();
            assert!(order >= 1.9, "t={t}: {e1} {e2}");
        }
    }

    #[test]
    fn coercivity_at_flat_state() {
        let g = grid1(64);
        let op = flat(&g, 0.5);
        let c = op.coercivity_probe(4, 4, 0).unwrap();
        assert!((c - 0.625).abs() < 1e-6, "{c}");
        let c = flat(&g, 1.0).coercivity_probe(4, 4, 0).unwrap();
        assert!((c - 0.25).abs() < 1e-6, "{c}");
        assert!(op.rayleigh_probe(4, 4, 0).unwrap() > 1e-3);
    }

    #[test]
    fn flat_operator_is_symmetric() {
        let g = grid1(32);
        assert!(flat(&g, 0.5).self_adjoint_defect(4, 3, 1).unwrap() < 1e-10);
        let g2 = TorusGrid::uniform(2, 8).unwrap();
        assert!(flat(&g2, 0.5).self_adjoint_defect(2, 2, 1).unwrap() < 1e-10);
    }

    #[test]
    fn pairing_flat_mode_sum() {
        let g = grid1(32);
        let op = flat(&g, 0.5);
        let u = g.field_from_fn(|x| x[0].cos());
        let area = g.volume();
        assert!((op.pairing(&u, &u) - 0.5 * area).abs() < 1e-12);
        let v = random_band_limited(&g, 3, 1.0, 2).unwrap();
        assert_eq!(op.pairing(&u, &v), op.pairing(&v, &u));
    }

    #[test]
    fn integration_by_parts_identity() {
        for (n, size) in [(1usize, 64usize), (2, 16)] {
            let g = TorusGrid::uniform(n, size).unwrap();
            let psi = random_band_limited(&g, 2, 0.1, 5).unwrap();
            let chi = HermitianFormField::new(mat::diag(&[1.5, 1.0][..n]), psi).unwrap();
            let s = assemble(&random_band_limited(&g, 2, 0.1, 6).unwrap()).unwrap();
            let u = random_band_limited(&g, 2, 1.0, 7).unwrap();
            for t in [0.0, 0.4, 1.0] {
                let op = LinearizedOperator::new(s.clone(), &chi, t).unwrap();
                let lhs = op.pairing(&u, &op.apply(&u).unwrap());
                let rhs = op.energy_identity(&u).unwrap();
                assert!((lhs - rhs).abs() < 1e-7 * lhs.abs(), "n={n} t={t}: {lhs} {rhs}");
            }
        }
    }
}
