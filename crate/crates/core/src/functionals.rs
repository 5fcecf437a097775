//! Energy functionals and cohomological class constants.
//!
//! Functionals defined through their first variation are evaluated by
//! Gauss–Legendre quadrature along a straight segment in the space of
//! potentials: for `dF = ∫ φ̇·D(φ)·ω_φ^n`,
//! `F(b) − F(a) = ∫₀¹ ∫ (b − a)·D(a + s(b − a))·det g ds`.

use serde::Serialize;

use crate::grid::{integrate_plain, GridError, ScalarField};
use crate::kahler::{
    assemble, assemble_with_metric, jmu_density, trace_form, HermitianFormField, KahlerError, KahlerState,
};
use crate::mat::{self, MatField};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FunctionalError {
    #[error("path leaves the space of Kähler potentials at s = {s:.4}: {source}")]
    InvalidPath { s: f64, source: KahlerError },
    #[error(transparent)]
    Kahler(#[from] KahlerError),
}

impl From<GridError> for FunctionalError {
    fn from(e: GridError) -> Self {
        FunctionalError::Kahler(e.into())
    }
}

/// Cohomological averages of the twist form and curvature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassConstants {
    /// `χ̄`, volume average of `tr χ` at the background metric.
    pub chi_bar: f64,
    /// `R̄`, volume average of `R` at the background metric (zero here).
    pub r_bar: f64,
    /// `c_1, …, c_n` for the `χ^k` functionals.
    pub c: Vec<f64>,
}

impl ClassConstants {
    /// `C_t = (1−t)χ̄ − tR̄`.
    pub fn c_t(&self, t: f64) -> f64 {
        (1.0 - t) * self.chi_bar - t * self.r_bar
    }

    pub fn c_k(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.c.get(i)).copied()
    }
}

pub fn class_constants(chi: &HermitianFormField) -> Result<ClassConstants, KahlerError> {
    chi.require_positive()?;
    let grid = chi.grid();
    let background = assemble(&grid.zeros())?;
    let vol = background.volume();
    let avg = |f: &ScalarField| integrate_plain(&f.mul(background.det())) / vol;
    let chi_bar = avg(&trace_form(&background, chi)?);
    let r_bar = avg(background.scalar());
    let c = (1..=grid.n())
        .map(|k| jmu_density(&background, chi, k).map(|d| avg(&d)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClassConstants { chi_bar, r_bar, c })
}

/// Adaptive Gauss–Legendre settings for segment integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathQuadrature {
    pub initial_nodes: usize,
    pub rel_tol: f64,
    pub max_nodes: usize,
}

impl Default for PathQuadrature {
    fn default() -> Self {
        Self {
            initial_nodes: 16,
            rel_tol: 1e-9,
            max_nodes: 256,
        }
    }
}

/// A functional value together with the node count that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathValue {
    pub value: f64,
    pub nodes: usize,
}

/// `∫₀¹ ∫ (to − from)·density(state_s)·det g_s ds` with
/// `state_s = assemble(from + s(to − from))`.
pub fn segment_integral<F>(
    from: &ScalarField,
    to: &ScalarField,
    quad: &PathQuadrature,
    density: F,
) -> Result<PathValue, FunctionalError>
where
    F: Fn(&KahlerState) -> Result<ScalarField, KahlerError>,
{
    from.same_grid(to)?;
    let dir = to - from;
    if dir.sup_norm() == 0.0 {
        return Ok(PathValue { value: 0.0, nodes: 0 });
    }
    // returns the rule value and the same rule applied to |integrand|, which
    // sets the scale below which differences are roundoff
    // the metric is affine in s along the segment
    let n = from.grid().n();
    let id = mat::identity(n);
    let base = MatField::complex_hessian(from).map(|h| mat::add(n, &id, h));
    let slope = MatField::complex_hessian(&dir);
    let rule = |m: usize| -> Result<(f64, f64), FunctionalError> {
        let (nodes, weights) = gauss_legendre(m);
        let (mut total, mut mass) = (0.0, 0.0);
        for (&s, &w) in nodes.iter().zip(&weights) {
            let phi = from.axpy(s, &dir);
            let metric = base.zip_map(&slope, |b, d| mat::add(n, b, &mat::scale(n, d, s)));
            let state = assemble_with_metric(phi, metric)
                .map_err(|source| FunctionalError::InvalidPath { s, source })?;
            let d = density(&state)?;
            total += w * state.weighted_dot(&dir, &d);
            mass += w * state.weighted_dot(&dir.map(f64::abs), &d.map(f64::abs));
        }
        Ok((total, mass))
    };
    let mut m = quad.initial_nodes.max(1);
    let (mut prev, _) = rule(m)?;
    while 2 * m <= quad.max_nodes {
        let (next, mass) = rule(2 * m)?;
        m *= 2;
        let scale = next.abs().max(1e-6 * mass);
        let converged = (next - prev).abs() <= quad.rel_tol * scale;
        prev = next;
        if converged {
            break;
        }
    }
    Ok(PathValue { value: prev, nodes: m })
}

/// Evaluates the first-variation functionals for one twist form.
#[derive(Debug, Clone)]
pub struct Functionals {
    chi: HermitianFormField,
    constants: ClassConstants,
    quad: PathQuadrature,
}

impl Functionals {
    pub fn new(chi: &HermitianFormField) -> Result<Self, KahlerError> {
        Ok(Self {
            constants: class_constants(chi)?,
            chi: chi.clone(),
            quad: PathQuadrature::default(),
        })
    }

    pub fn with_quadrature(mut self, quad: PathQuadrature) -> Self {
        self.quad = quad;
        self
    }

    pub fn chi(&self) -> &HermitianFormField {
        &self.chi
    }

    pub fn constants(&self) -> &ClassConstants {
        &self.constants
    }

    /// `J_χ(to) − J_χ(from)` along the straight segment.
    pub fn j_chi_segment(&self, from: &ScalarField, to: &ScalarField) -> Result<f64, FunctionalError> {
        let cb = self.constants.chi_bar;
        let v = segment_integral(from, to, &self.quad, |s| {
            Ok(trace_form(s, &self.chi)?.map(|x| x - cb))
        })?;
        Ok(v.value)
    }

    /// `J_χ(φ)` with `J_χ(0) = 0`.
    pub fn j_chi(&self, phi: &ScalarField) -> Result<f64, FunctionalError> {
        self.j_chi_segment(&phi.grid().zeros(), phi)
    }

    /// `E(to) − E(from)` from `dE = −∫ φ̇ (R_φ − R̄) ω_φ^n`.
    pub fn k_energy_segment(&self, from: &ScalarField, to: &ScalarField) -> Result<f64, FunctionalError> {
        let rb = self.constants.r_bar;
        let v = segment_integral(from, to, &self.quad, |s| Ok(s.scalar().map(|r| rb - r)))?;
        Ok(v.value)
    }

    pub fn k_energy(&self, phi: &ScalarField) -> Result<f64, FunctionalError> {
        self.k_energy_segment(&phi.grid().zeros(), phi)
    }

    /// `E_{χ,t} = (1−t)J_χ + tE`.
    pub fn twisted_energy(&self, phi: &ScalarField, t: f64) -> Result<f64, FunctionalError> {
        let j = if t < 1.0 { self.j_chi(phi)? } else { 0.0 };
        let e = if t > 0.0 { self.k_energy(phi)? } else { 0.0 };
        Ok((1.0 - t) * j + t * e)
    }

    /// `J_{χ^k}(to) − J_{χ^k}(from)`.
    pub fn j_mu_segment(&self, from: &ScalarField, to: &ScalarField, k: usize) -> Result<f64, FunctionalError> {
        let n = from.grid().n();
        let ck = self
            .constants
            .c_k(k)
            .ok_or(KahlerError::DegreeOutOfRange { k, n })?;
        let v = segment_integral(from, to, &self.quad, |s| {
            Ok(jmu_density(s, &self.chi, k)?.map(|x| x - ck))
        })?;
        Ok(v.value)
    }

    pub fn j_mu(&self, phi: &ScalarField, k: usize) -> Result<f64, FunctionalError> {
        self.j_mu_segment(&phi.grid().zeros(), phi, k)
    }

    /// Analytic first variation `∫ u (tr_φχ − χ̄) det g_φ`.
    pub fn j_chi_gradient(&self, state: &KahlerState, u: &ScalarField) -> Result<f64, KahlerError> {
        let cb = self.constants.chi_bar;
        let d = trace_form(state, &self.chi)?.map(|x| x - cb);
        Ok(state.weighted_dot(u, &d))
    }

    /// Analytic first variation `−∫ u (R_φ − R̄) det g_φ`.
    pub fn k_energy_gradient(&self, state: &KahlerState, u: &ScalarField) -> f64 {
        let rb = self.constants.r_bar;
        -state.weighted_dot(u, &state.scalar().map(|r| r - rb))
    }

    pub fn j_mu_gradient(&self, state: &KahlerState, u: &ScalarField, k: usize) -> Result<f64, KahlerError> {
        let ck = self
            .constants
            .c_k(k)
            .ok_or(KahlerError::DegreeOutOfRange { k, n: state.n() })?;
        let d = jmu_density(state, &self.chi, k)?.map(|x| x - ck);
        Ok(state.weighted_dot(u, &d))
    }
}

/// `∫ log(det g_φ)·det g_φ`.
pub fn entropy(phi: &ScalarField) -> Result<f64, KahlerError> {
    let state = assemble(phi)?;
    let d = state.det();
    Ok(integrate_plain(&d.map(|v| v * v.ln())))
}

/// `(I, J)` where `J(φ) = ∫ φ(ω₀^n − ω_φ^n)` and `I` is the Monge–Ampère
/// energy with `dI = ∫ φ̇ ω_φ^n`, `I(0) = 0`.
pub fn aubin_i_j(phi: &ScalarField) -> Result<(f64, f64), FunctionalError> {
    let state = assemble(phi)?;
    let j = integrate_plain(&phi.zip_map(state.det(), |p, d| p * (1.0 - d)));
    let i = monge_ampere_energy(phi, &PathQuadrature::default())?;
    Ok((i, j))
}

/// `I(to) − I(from)` with `dI = ∫ φ̇ ω_φ^n`.
pub fn monge_ampere_segment(
    from: &ScalarField,
    to: &ScalarField,
    quad: &PathQuadrature,
) -> Result<f64, FunctionalError> {
    let one = from.grid().constant(1.0);
    Ok(segment_integral(from, to, quad, |_| Ok(one.clone()))?.value)
}

pub fn monge_ampere_energy(phi: &ScalarField, quad: &PathQuadrature) -> Result<f64, FunctionalError> {
    monge_ampere_segment(&phi.grid().zeros(), phi, quad)
}

pub fn j_chi(phi: &ScalarField, chi: &HermitianFormField) -> Result<f64, FunctionalError> {
    Functionals::new(chi)?.j_chi(phi)
}

pub fn k_energy(phi: &ScalarField) -> Result<f64, FunctionalError> {
    let grid = phi.grid();
    Functionals::new(&HermitianFormField::identity(grid))?.k_energy(phi)
}

pub fn twisted_energy(phi: &ScalarField, chi: &HermitianFormField, t: f64) -> Result<f64, FunctionalError> {
    Functionals::new(chi)?.twisted_energy(phi, t)
}

pub fn j_mu(phi: &ScalarField, chi: &HermitianFormField, k: usize) -> Result<f64, FunctionalError> {
    Functionals::new(chi)?.j_mu(phi, k)
}

/// Density of `i∂φ∧∂̄φ∧ω_ψ^{n−1}` against `ω₀^n/n`, i.e. `v^H adj(g_ψ) v` with
/// `v = ∂φ`. Nonnegative at every valid `ψ`.
pub fn linear_path_integrand(state: &KahlerState, phi: &ScalarField) -> Result<ScalarField, KahlerError> {
    phi.same_grid(state.phi())?;
    let n = state.n();
    let grad = crate::kahler::holomorphic_gradient(phi);
    let vals: Vec<f64> = grad
        .iter()
        .zip(state.metric().data())
        .map(|(v, g)| mat::quad(n, v, &mat::adjugate(n, g), v).re)
        .collect();
    Ok(ScalarField::new(state.grid(), vals)?)
}

/// Flat summary of all functionals at one potential.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub j_chi: f64,
    pub entropy: f64,
    pub k_energy: f64,
    pub twisted: f64,
    #[serde(rename = "aubin_I")]
    pub aubin_i: f64,
    #[serde(rename = "aubin_J")]
    pub aubin_j: f64,
    pub j_mu_k: Vec<f64>,
    pub t: f64,
    pub grid: String,
    pub seed: u64,
}

pub fn energy_report(
    phi: &ScalarField,
    chi: &HermitianFormField,
    t: f64,
    seed: u64,
) -> Result<EnergyReport, FunctionalError> {
    let f = Functionals::new(chi)?;
    let j_chi = f.j_chi(phi)?;
    let k_energy = f.k_energy(phi)?;
    let (aubin_i, aubin_j) = aubin_i_j(phi)?;
    let j_mu_k = (1..=phi.grid().n())
        .map(|k| f.j_mu(phi, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EnergyReport {
        j_chi,
        entropy: entropy(phi)?,
        k_energy,
        twisted: (1.0 - t) * j_chi + t * k_energy,
        aubin_i,
        aubin_j,
        j_mu_k,
        t,
        grid: phi.grid().label(),
        seed,
    })
}
