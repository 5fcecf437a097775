//! Periodic spectral fields on flat complex tori.
//!
//! A torus of complex dimension `n` is sampled on a uniform lattice with
//! `2n` real axes ordered `(x_1, y_1, x_2, y_2)`, each of period `2π`.
//! Samples are stored row-major with the last axis fastest.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("complex dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("expected {expected} axis sizes, got {got}")]
    AxisCount { expected: usize, got: usize },
    #[error("axis size {0} is not a power of two >= 8")]
    BadSize(usize),
    #[error("sample count {got} does not match grid size {expected}")]
    SampleCount { expected: usize, got: usize },
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("axis {axis} out of range for real dimension {dim}")]
    BadAxis { axis: usize, dim: usize },
    #[error("derivative order {0} not supported (1 or 2)")]
    BadOrder(usize),
    #[error("total weight {0} is not positive")]
    NonPositiveWeight(f64),
    #[error("max_mode {max_mode} is not below the Nyquist index of axis size {size}")]
    AboveNyquist { max_mode: usize, size: usize },
}

struct GridInner {
    n: usize,
    sizes: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

/// Uniform periodic lattice on `(R/2πZ)^{2n}` with cached FFT plans.
///
/// Cloning is cheap; two grids compare equal when dimension and sizes agree.
#[derive(Clone)]
pub struct TorusGrid {
    inner: Arc<GridInner>,
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n == other.inner.n && self.inner.sizes == other.inner.sizes)
    }
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.inner.n)
            .field("sizes", &self.inner.sizes)
            .finish()
    }
}

impl TorusGrid {
    pub fn new(n: usize, sizes: &[usize]) -> Result<Self, GridError> {
        if n != 1 && n != 2 {
            return Err(GridError::BadDimension(n));
        }
        if sizes.len() != 2 * n {
            return Err(GridError::AxisCount {
                expected: 2 * n,
                got: sizes.len(),
            });
        }
        if let Some(&bad) = sizes.iter().find(|&&s| s < 8 || !s.is_power_of_two()) {
            return Err(GridError::BadSize(bad));
        }
        let mut strides = vec![1; sizes.len()];
        for a in (0..sizes.len() - 1).rev() {
            strides[a] = strides[a + 1] * sizes[a + 1];
        }
        let mut planner = FftPlanner::new();
        let forward = sizes.iter().map(|&s| planner.plan_fft_forward(s)).collect();
        let inverse = sizes.iter().map(|&s| planner.plan_fft_inverse(s)).collect();
        Ok(Self {
            inner: Arc::new(GridInner {
                n,
                sizes: sizes.to_vec(),
                strides,
                len: sizes.iter().product(),
                forward,
                inverse,
            }),
        })
    }

    /// Same sample count on every real axis.
    pub fn uniform(n: usize, size: usize) -> Result<Self, GridError> {
        Self::new(n, &vec![size; 2 * n])
    }

    /// Complex dimension.
    pub fn n(&self) -> usize {
        self.inner.n
    }

    pub fn real_dim(&self) -> usize {
        2 * self.inner.n
    }

    pub fn sizes(&self) -> &[usize] {
        &self.inner.sizes
    }

    pub fn len(&self) -> usize {
        self.inner.len
    }

    pub fn is_empty(&self) -> bool {
        self.inner.len == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.inner
            .sizes
            .iter()
            .map(|&s| 2.0 * PI / s as f64)
            .product()
    }

    /// Coordinate volume `(2π)^{2n}`.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.real_dim() as i32)
    }

    /// Human-readable size label such as `64x64`.
    pub fn label(&self) -> String {
        self.inner
            .sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }

    /// Real coordinates of the sample at flat index `index`.
    pub fn coordinates(&self, index: usize, out: &mut [f64]) {
        let mut rem = index;
        for a in 0..self.real_dim() {
            let i = rem / self.inner.strides[a];
            rem %= self.inner.strides[a];
            out[a] = 2.0 * PI * i as f64 / self.inner.sizes[a] as f64;
        }
    }

    /// Signed integer wavenumber of spectral index `j` on axis `a`, with a
    /// flag marking the unpaired Nyquist mode.
    fn wavenumber(&self, axis: usize, j: usize) -> (f64, bool) {
        let s = self.inner.sizes[axis];
        if j < s / 2 {
            (j as f64, false)
        } else if j == s / 2 {
            (-(j as f64), true)
        } else {
            (j as f64 - s as f64, false)
        }
    }

    /// Calls `f(flat_index, wavenumbers, nyquist_flags)` for every mode.
    pub(crate) fn for_each_mode(&self, mut f: impl FnMut(usize, &[f64], &[bool])) {
        let dim = self.real_dim();
        let mut idx = vec![0usize; dim];
        let mut k = vec![0.0; dim];
        let mut nyq = vec![false; dim];
        for a in 0..dim {
            let (ka, na) = self.wavenumber(a, 0);
            k[a] = ka;
            nyq[a] = na;
        }
        for flat in 0..self.len() {
            f(flat, &k, &nyq);
            // increment the multi-index, last axis fastest
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < self.inner.sizes[a] {
                    let (ka, na) = self.wavenumber(a, idx[a]);
                    k[a] = ka;
                    nyq[a] = na;
                    break;
                }
                idx[a] = 0;
                let (ka, na) = self.wavenumber(a, 0);
                k[a] = ka;
                nyq[a] = na;
            }
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let inner = &self.inner;
        for axis in 0..inner.sizes.len() {
            let size = inner.sizes[axis];
            let stride = inner.strides[axis];
            let plan = if inverse {
                &inner.inverse[axis]
            } else {
                &inner.forward[axis]
            };
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            let mut line = vec![Complex64::default(); size];
            let block = size * stride;
            for base in (0..inner.len).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[start + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[start + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// Forward transform of a field.
    pub fn spectrum(&self, f: &ScalarField) -> Spectrum {
        debug_assert!(f.grid == *self);
        let mut coeffs: Vec<Complex64> =
            f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut coeffs, false);
        Spectrum {
            grid: self.clone(),
            coeffs,
        }
    }

    /// Multiplies a spectrum by `symbol(k, nyquist)` and returns the real part
    /// of the inverse transform.
    pub fn apply_symbol(
        &self,
        spec: &Spectrum,
        mut symbol: impl FnMut(&[f64], &[bool]) -> Complex64,
    ) -> ScalarField {
        let mut data = spec.coeffs.clone();
        self.for_each_mode(|flat, k, nyq| data[flat] *= symbol(k, nyq));
        self.inverse_real(data)
    }

    fn inverse_real(&self, mut data: Vec<Complex64>) -> ScalarField {
        self.transform(&mut data, true);
        let scale = 1.0 / self.len() as f64;
        ScalarField {
            grid: self.clone(),
            values: data.into_iter().map(|c| c.re * scale).collect(),
        }
    }

    /// Samples `f` at every grid point.
    pub fn field_from_fn(&self, mut f: impl FnMut(&[f64]) -> f64) -> ScalarField {
        let mut x = vec![0.0; self.real_dim()];
        let values = (0..self.len())
            .map(|i| {
                self.coordinates(i, &mut x);
                f(&x)
            })
            .collect();
        ScalarField {
            grid: self.clone(),
            values,
        }
    }

    pub fn zeros(&self) -> ScalarField {
        self.constant(0.0)
    }

    pub fn constant(&self, c: f64) -> ScalarField {
        ScalarField {
            grid: self.clone(),
            values: vec![c; self.len()],
        }
    }
}

/// Multiplier of the derivative with per-axis `orders` at one mode.
/// Odd derivatives of the unpaired Nyquist mode are set to zero.
pub(crate) fn derivative_symbol(orders: &[usize], k: &[f64], nyq: &[bool]) -> Complex64 {
    let mut m = Complex64::new(1.0, 0.0);
    for (a, &o) in orders.iter().enumerate() {
        if o == 0 {
            continue;
        }
        if nyq[a] && o % 2 == 1 {
            return Complex64::new(0.0, 0.0);
        }
        m *= Complex64::new(0.0, k[a]).powu(o as u32);
    }
    m
}

/// Fourier coefficients of a field (unnormalized forward DFT).
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub(crate) fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn from_coeffs(grid: &TorusGrid, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(coeffs.len(), grid.len());
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    /// Real part of the inverse transform.
    pub(crate) fn to_field(&self) -> ScalarField {
        self.grid.inverse_real(self.coeffs.clone())
    }

    /// Mixed derivative with per-axis orders.
    pub fn derivative(&self, orders: &[usize]) -> ScalarField {
        self.grid
            .apply_symbol(self, |k, nyq| derivative_symbol(orders, k, nyq))
    }

    /// Derivative along a list of axes, e.g. `&[0, 1]` for `∂x ∂y`.
    pub fn derivative_axes(&self, axes: &[usize]) -> ScalarField {
        let mut orders = vec![0; self.grid.real_dim()];
        for &a in axes {
            orders[a] += 1;
        }
        self.derivative(&orders)
    }

    /// Real and imaginary parts of `∂_{z_α}∂_{z̄_β} f`, using
    /// `∂_z = ½(∂_x − i∂_y)`.
    pub fn complex_second(&self, alpha: usize, beta: usize) -> (ScalarField, ScalarField) {
        let (xa, ya, xb, yb) = (2 * alpha, 2 * alpha + 1, 2 * beta, 2 * beta + 1);
        let re = self.grid.apply_symbol(self, |k, nyq| {
            0.25 * (derivative_symbol_axes(&[xa, xb], k, nyq)
                + derivative_symbol_axes(&[ya, yb], k, nyq))
        });
        if alpha == beta {
            return (re, self.grid.zeros());
        }
        let im = self.grid.apply_symbol(self, |k, nyq| {
            0.25 * (derivative_symbol_axes(&[xa, yb], k, nyq)
                - derivative_symbol_axes(&[ya, xb], k, nyq))
        });
        (re, im)
    }

    /// Real and imaginary parts of `∂_{z_α} f`.
    pub fn dz(&self, alpha: usize) -> (ScalarField, ScalarField) {
        let dx = self.derivative_axes(&[2 * alpha]);
        let dy = self.derivative_axes(&[2 * alpha + 1]);
        (dx * 0.5, dy * -0.5)
    }

    /// Real and imaginary parts of a product of Wirtinger derivatives.
    /// Each factor `(α, false)` is `∂_{z_α}`, `(α, true)` is `∂_{z̄_α}`.
    pub fn wirtinger(&self, factors: &[(usize, bool)]) -> (ScalarField, ScalarField) {
        // expand Π ½(∂_x ± i∂_y) into real mixed derivatives
        let m = factors.len();
        let mut terms: Vec<(Complex64, Vec<usize>)> = Vec::with_capacity(1 << m);
        for choice in 0..(1usize << m) {
            let mut coef = Complex64::new(0.5f64.powi(m as i32), 0.0);
            let mut axes = Vec::with_capacity(m);
            for (bit, &(alpha, bar)) in factors.iter().enumerate() {
                if choice >> bit & 1 == 0 {
                    axes.push(2 * alpha);
                } else {
                    axes.push(2 * alpha + 1);
                    coef *= Complex64::new(0.0, if bar { 1.0 } else { -1.0 });
                }
            }
            terms.push((coef, axes));
        }
        let part = |take_im: bool| {
            self.grid.apply_symbol(self, |k, nyq| {
                terms
                    .iter()
                    .map(|(c, axes)| {
                        let w = if take_im { c.im } else { c.re };
                        if w == 0.0 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            w * derivative_symbol_axes(axes, k, nyq)
                        }
                    })
                    .sum()
            })
        };
        (part(false), part(true))
    }
}

fn derivative_symbol_axes(axes: &[usize], k: &[f64], nyq: &[bool]) -> Complex64 {
    let mut orders = [0usize; 4];
    for &a in axes {
        orders[a] += 1;
    }
    derivative_symbol(&orders[..k.len()], k, nyq)
}

/// Real-valued samples on a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    /// Wraps samples, validating length and finiteness.
    pub fn new(grid: &TorusGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::SampleCount {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let f = Self {
            grid: grid.clone(),
            values,
        };
        f.check_finite()?;
        Ok(f)
    }

    pub(crate) fn from_raw(grid: &TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_finite(&self) -> Result<(), GridError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(GridError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn same_grid(&self, other: &ScalarField) -> Result<(), GridError> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(GridError::GridMismatch)
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Plain (unweighted) average.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Root-mean-square over samples.
    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        debug_assert!(self.grid == other.grid);
        Self::from_raw(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self + c·other`
    pub fn axpy(&self, c: f64, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, c: f64) -> ScalarField {
        self.map(|v| v * c)
    }
}

impl Mul<f64> for ScalarField {
    type Output = ScalarField;
    fn mul(mut self, c: f64) -> ScalarField {
        self.values.iter_mut().for_each(|v| *v *= c);
        self
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|v| -v)
    }
}

/// Exact derivative of the band-limited interpolant along one real axis.
pub fn partial(f: &ScalarField, axis: usize, order: usize) -> Result<ScalarField, GridError> {
    let dim = f.grid.real_dim();
    if axis >= dim {
        return Err(GridError::BadAxis { axis, dim });
    }
    if order != 1 && order != 2 {
        return Err(GridError::BadOrder(order));
    }
    f.check_finite()?;
    let mut orders = vec![0; dim];
    orders[axis] = order;
    Ok(f.grid.spectrum(f).derivative(&orders))
}

/// `f_{,αβ̄}` as a (real, imaginary) pair.
pub fn complex_second(
    f: &ScalarField,
    alpha: usize,
    beta: usize,
) -> Result<(ScalarField, ScalarField), GridError> {
    let n = f.grid.n();
    for idx in [alpha, beta] {
        if idx >= n {
            return Err(GridError::BadAxis { axis: idx, dim: n });
        }
    }
    f.check_finite()?;
    Ok(f.grid.spectrum(f).complex_second(alpha, beta))
}

/// Trapezoid quadrature `Σ f·w·(cell volume)`.
pub fn integrate(f: &ScalarField, weight: &ScalarField) -> Result<f64, GridError> {
    f.same_grid(weight)?;
    Ok(dot(&f.values, &weight.values) * f.grid.cell_volume())
}

/// Trapezoid quadrature of a field against the coordinate measure.
pub fn integrate_plain(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Subtracts the `weight`-average so that `∫ g·weight = 0`.
pub fn project_mean_zero(f: &ScalarField, weight: &ScalarField) -> Result<ScalarField, GridError> {
    f.same_grid(weight)?;
    let total: f64 = weight.values.iter().sum();
    if !(total > 0.0) {
        return Err(GridError::NonPositiveWeight(total * f.grid.cell_volume()));
    }
    let c = dot(&f.values, &weight.values) / total;
    Ok(f.map(|v| v - c))
}

/// Zeroes every mode with some `|k_a| > N_a/3` (2/3 truncation).
pub fn dealias(f: &ScalarField) -> ScalarField {
    let grid = &f.grid;
    let cut: Vec<f64> = grid.sizes().iter().map(|&s| s as f64 / 3.0).collect();
    let spec = grid.spectrum(f);
    grid.apply_symbol(&spec, |k, _| {
        if k.iter().zip(&cut).any(|(ka, c)| ka.abs() > *c) {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0, 0.0)
        }
    })
}

/// Reproducible random field with modes `1 ≤ max|k_a| ≤ max_mode`, zero
/// mean and sup-norm exactly `amplitude`.
pub fn random_band_limited(
    grid: &TorusGrid,
    max_mode: usize,
    amplitude: f64,
    seed: u64,
) -> Result<ScalarField, GridError> {
    if let Some(&size) = grid.sizes().iter().find(|&&s| max_mode >= s / 2) {
        return Err(GridError::AboveNyquist { max_mode, size });
    }
    if amplitude == 0.0 || max_mode == 0 {
        return Ok(grid.zeros());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![Complex64::default(); grid.len()];
    let limit = max_mode as f64;
    grid.for_each_mode(|flat, k, _| {
        if k.iter().all(|ka| ka.abs() <= limit) && k.iter().any(|&ka| ka != 0.0) {
            let k2: f64 = k.iter().map(|ka| ka * ka).sum();
            let decay = 1.0 / (1.0 + k2);
            coeffs[flat] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * decay;
        }
    });
    let spec = Spectrum {
        grid: grid.clone(),
        coeffs,
    };
    let raw = grid.apply_symbol(&spec, |_, _| Complex64::new(1.0, 0.0));
    let mean = raw.mean();
    let raw = raw.map(|v| v - mean);
    let sup = raw.sup_norm();
    Ok(&raw * (amplitude / sup))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(s: usize) -> TorusGrid {
        TorusGrid::uniform(1, s).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert_eq!(TorusGrid::new(1, &[8, 12]).unwrap_err(), GridError::BadSize(12));
        assert_eq!(TorusGrid::new(1, &[4, 8]).unwrap_err(), GridError::BadSize(4));
        assert!(matches!(TorusGrid::new(3, &[8; 6]), Err(GridError::BadDimension(3))));
        assert!(matches!(TorusGrid::new(2, &[8; 2]), Err(GridError::AxisCount { .. })));
    }

    #[test]
    fn derivative_of_cosine() {
        let g = grid1(32);
        let f = g.field_from_fn(|x| x[0].cos());
        let df = partial(&f, 0, 1).unwrap();
        let exact = g.field_from_fn(|x| -x[0].sin());
        assert!(df.max_abs_diff(&exact) < 1e-13);
        let d2 = partial(&f, 0, 2).unwrap();
        assert!(d2.max_abs_diff(&(-&f)) < 1e-13);
    }

    #[test]
    fn derivative_exact_on_modes() {
        let g = TorusGrid::new(1, &[16, 32]).unwrap();
        for k in 1..7 {
            let kf = k as f64;
            let f = g.field_from_fn(|x| (kf * x[1] + 0.3).cos());
            let df = partial(&f, 1, 1).unwrap();
            let exact = g.field_from_fn(|x| -kf * (kf * x[1] + 0.3).sin());
            assert!(df.max_abs_diff(&exact) <= 1e-12 * kf);
        }
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let g = grid1(16);
        let f = g.constant(3.5);
        for axis in 0..2 {
            for order in 1..=2 {
                assert!(partial(&f, axis, order).unwrap().sup_norm() < 1e-14);
            }
        }
        let (re, im) = complex_second(&f, 0, 0).unwrap();
        assert!(re.sup_norm() < 1e-14 && im.sup_norm() < 1e-14);
    }

    #[test]
    fn second_derivative_matches_fourth_order_differences() {
        // Finite-difference oracle: error of the five-point stencil is O(h^4).
        let errs: Vec<f64> = [32usize, 64]
            .iter()
            .map(|&s| {
                let g = grid1(s);
                let f = random_band_limited(&g, 3, 1.0, 11).unwrap();
                let d2 = partial(&f, 0, 2).unwrap();
                let h = 2.0 * PI / s as f64;
                let v = f.values();
                let mut err: f64 = 0.0;
                for i in 0..s {
                    for j in 0..s {
                        let at = |ii: isize| v[((ii.rem_euclid(s as isize)) as usize) * s + j];
                        let ii = i as isize;
                        let fd = (-at(ii + 2) + 16.0 * at(ii + 1) - 30.0 * at(ii) + 16.0 * at(ii - 1)
                            - at(ii - 2))
                            / (12.0 * h * h);
                        err = err.max((fd - d2.values()[i * s + j]).abs());
                    }
                }
                err
            })
            .collect();
        assert!(errs[0] < 1e-2, "{errs:?}");
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.8, "observed order {order}");
    }

    #[test]
    fn complex_second_n1_cosine() {
        let g = grid1(16);
        let f = g.field_from_fn(|x| x[0].cos());
        let (re, im) = complex_second(&f, 0, 0).unwrap();
        let exact = g.field_from_fn(|x| -0.25 * x[0].cos());
        assert!(re.max_abs_diff(&exact) < 1e-14);
        assert!(im.sup_norm() < 1e-15);
    }

    #[test]
    fn complex_second_n2_off_diagonal() {
        // f = cos(x1) cos(x2):  ∂_{z1}∂_{z̄2} f = ¼ (f_{x1 x2} + f_{y1 y2}) + ¼ i (f_{x1 y2} − f_{y1 x2})
        // = ¼ sin(x1) sin(x2), imaginary part 0.
        let g = TorusGrid::uniform(2, 8).unwrap();
        let f = g.field_from_fn(|x| x[0].cos() * x[2].cos());
        let (re, im) = complex_second(&f, 0, 1).unwrap();
        let exact = g.field_from_fn(|x| 0.25 * x[0].sin() * x[2].sin());
        assert!(re.max_abs_diff(&exact) < 1e-14);
        assert!(im.sup_norm() < 1e-14);
        // f = cos(x1 + y2): imaginary part ¼(f_{x1 y2} − 0) = −¼ cos(x1 + y2)
        let f = g.field_from_fn(|x| (x[0] + x[3]).cos());
        let (re, im) = complex_second(&f, 0, 1).unwrap();
        let (re_t, im_t) = complex_second(&f, 1, 0).unwrap();
        assert!(re.sup_norm() < 1e-14);
        let exact = g.field_from_fn(|x| -0.25 * (x[0] + x[3]).cos());
        assert!(im.max_abs_diff(&exact) < 1e-14);
        assert!(re.max_abs_diff(&re_t) < 1e-14);
        assert!(im.max_abs_diff(&(-&im_t)) < 1e-14);
    }

    #[test]
    fn quadrature_examples() {
        let g = grid1(16);
        let one = g.constant(1.0);
        let vol = (2.0 * PI).powi(2);
        assert!((integrate(&one, &one).unwrap() - vol).abs() < 1e-12);
        let c = g.field_from_fn(|x| x[0].cos());
        assert!(integrate(&c, &one).unwrap().abs() < 1e-13);
        let c2 = g.field_from_fn(|x| x[0].cos().powi(2));
        assert!((integrate(&c2, &one).unwrap() - 0.5 * vol).abs() < 1e-12);
        let other = grid1(32).constant(1.0);
        assert_eq!(integrate(&one, &other), Err(GridError::GridMismatch));
    }

    #[test]
    fn mean_zero_projection() {
        let g = grid1(16);
        let one = g.constant(1.0);
        let f = g.field_from_fn(|x| 5.0 + x[0].cos());
        let p = project_mean_zero(&f, &one).unwrap();
        let e0 = p.max_abs_diff(&g.field_from_fn(|x| x[0].cos()));
        assert!(e0 < 1e-14, "{e0}");
        let again = project_mean_zero(&p, &one).unwrap();
        assert!(again.max_abs_diff(&p) < 1e-14);

        let f = random_band_limited(&g, 4, 2.0, 3).unwrap().map(|v| v + 1.7);
        let w = random_band_limited(&g, 2, 0.5, 4).unwrap().map(|v| v + 1.0);
        let p = project_mean_zero(&f, &w).unwrap();
        let total = integrate(&w, &one).unwrap();
        assert!((integrate(&p, &w).unwrap() / total).abs() < 1e-12);
        assert!(matches!(
            project_mean_zero(&f, &g.constant(-1.0)),
            Err(GridError::NonPositiveWeight(_))
        ));
    }

    #[test]
    fn dealias_behaviour() {
        let g = grid1(16);
        let low = g.field_from_fn(|x| (2.0 * x[0]).cos() + (5.0 * x[1]).sin());
        assert!(dealias(&low).max_abs_diff(&low) < 1e-14);
        let nyq = g.field_from_fn(|x| (8.0 * x[0]).cos());
        assert!(dealias(&nyq).sup_norm() < 1e-14);
        let f = random_band_limited(&g, 7, 1.0, 5).unwrap();
        let once = dealias(&f);
        assert!(dealias(&once).max_abs_diff(&once) < 1e-14);
    }

    #[test]
    fn random_fields() {
        let g = grid1(16);
        assert_eq!(random_band_limited(&g, 3, 0.0, 1).unwrap().sup_norm(), 0.0);
        let a = random_band_limited(&g, 3, 0.7, 1).unwrap();
        let b = random_band_limited(&g, 3, 0.7, 1).unwrap();
        let c = random_band_limited(&g, 3, 0.7, 2).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&c) > 1e-3);
        assert!(a.mean().abs() < 1e-15);
        assert!(a.sup_norm() <= 0.7 + 1e-15);
        assert!(random_band_limited(&g, 8, 1.0, 0).is_err());
    }

    #[test]
    fn first_derivatives_integrate_to_zero() {
        let g = TorusGrid::uniform(2, 8).unwrap();
        let f = random_band_limited(&g, 3, 1.0, 9).unwrap().map(|v| v.exp());
        for axis in 0..4 {
            assert!(integrate_plain(&partial(&f, axis, 1).unwrap()).abs() < 1e-11);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let g = grid1(8);
        let mut v = vec![0.0; 64];
        v[5] = f64::NAN;
        assert_eq!(ScalarField::new(&g, v).unwrap_err(), GridError::NonFinite(5));
    }
}
