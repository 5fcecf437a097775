//! Pointwise `n×n` complex matrices for `n ≤ 2`, in closed form.
//!
//! Matrices are stored as `[[Complex64; 2]; 2]`; for `n = 1` only the
//! `[0][0]` entry is meaningful and the rest is kept at zero.

use num_complex::Complex64;

use crate::grid::{ScalarField, TorusGrid};

pub type Mat = [[Complex64; 2]; 2];

pub const ZERO: Mat = [[Complex64 { re: 0.0, im: 0.0 }; 2]; 2];

pub fn identity(n: usize) -> Mat {
    let mut m = ZERO;
    for a in 0..n {
        m[a][a] = Complex64::new(1.0, 0.0);
    }
    m
}

/// Real diagonal matrix.
pub fn diag(entries: &[f64]) -> Mat {
    let mut m = ZERO;
    for (a, &d) in entries.iter().enumerate() {
        m[a][a] = Complex64::new(d, 0.0);
    }
    m
}

pub fn add(n: usize, a: &Mat, b: &Mat) -> Mat {
    let mut m = ZERO;
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[i][j] + b[i][j];
        }
    }
    m
}

pub fn scale(n: usize, a: &Mat, c: f64) -> Mat {
    let mut m = ZERO;
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[i][j] * c;
        }
    }
    m
}

pub fn mul(n: usize, a: &Mat, b: &Mat) -> Mat {
    let mut m = ZERO;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                m[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    m
}

pub fn trace(n: usize, a: &Mat) -> Complex64 {
    (0..n).map(|i| a[i][i]).sum()
}

pub fn det(n: usize, a: &Mat) -> Complex64 {
    match n {
        1 => a[0][0],
        _ => a[0][0] * a[1][1] - a[0][1] * a[1][0],
    }
}

/// Adjugate, so that `a · adj(a) = det(a) · I`.
pub fn adjugate(n: usize, a: &Mat) -> Mat {
    match n {
        1 => identity(1),
        _ => [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]],
    }
}

pub fn inverse(n: usize, a: &Mat) -> Mat {
    let d = det(n, a);
    let adj = adjugate(n, a);
    let mut m = ZERO;
    for i in 0..n {
        for j in 0..n {
            m[i][j] = adj[i][j] / d;
        }
    }
    m
}

pub fn conj_transpose(n: usize, a: &Mat) -> Mat {
    let mut m = ZERO;
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[j][i].conj();
        }
    }
    m
}

/// Largest entrywise gap between `a` and its conjugate transpose.
pub fn hermitian_defect(n: usize, a: &Mat) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            d = d.max((a[i][j] - a[j][i].conj()).norm());
        }
    }
    d
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(n: usize, a: &Mat) -> f64 {
    match n {
        1 => a[0][0].re,
        _ => {
            let (p, q) = (a[0][0].re, a[1][1].re);
            let half = 0.5 * (p - q);
            0.5 * (p + q) - (half * half + a[0][1].norm_sqr()).sqrt()
        }
    }
}

/// `v^H a w` for column vectors stored in the first `n` slots.
pub fn quad(n: usize, v: &[Complex64; 2], a: &Mat, w: &[Complex64; 2]) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            s += v[i].conj() * a[i][j] * w[j];
        }
    }
    s
}

/// Matrix-valued samples on a grid.
#[derive(Clone, Debug)]
pub struct MatField {
    grid: TorusGrid,
    data: Vec<Mat>,
}

impl MatField {
    pub fn from_vec(grid: &TorusGrid, data: Vec<Mat>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self {
            grid: grid.clone(),
            data,
        }
    }

    pub fn constant(grid: &TorusGrid, m: Mat) -> Self {
        Self::from_vec(grid, vec![m; grid.len()])
    }

    /// Complex Hessian `f_{,αβ̄}` of a scalar field.
    pub fn complex_hessian(f: &ScalarField) -> Self {
        let grid = f.grid();
        let n = grid.n();
        let spec = grid.spectrum(f);
        let mut data = vec![ZERO; grid.len()];
        for a in 0..n {
            for b in a..n {
                let (re, im) = spec.complex_second(a, b);
                for (p, m) in data.iter_mut().enumerate() {
                    let z = Complex64::new(re.values()[p], im.values()[p]);
                    m[a][b] = z;
                    m[b][a] = z.conj();
                }
            }
        }
        Self::from_vec(grid, data)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn data(&self) -> &[Mat] {
        &self.data
    }

    pub fn at(&self, p: usize) -> &Mat {
        &self.data[p]
    }

    pub fn map(&self, f: impl Fn(&Mat) -> Mat) -> MatField {
        Self::from_vec(&self.grid, self.data.iter().map(f).collect())
    }

    pub fn zip_map(&self, other: &MatField, f: impl Fn(&Mat, &Mat) -> Mat) -> MatField {
        Self::from_vec(
            &self.grid,
            self.data.iter().zip(&other.data).map(|(a, b)| f(a, b)).collect(),
        )
    }

    /// Real and imaginary parts of entry `(α, β)`.
    pub fn entry(&self, alpha: usize, beta: usize) -> (ScalarField, ScalarField) {
        let re = self.data.iter().map(|m| m[alpha][beta].re).collect();
        let im = self.data.iter().map(|m| m[alpha][beta].im).collect();
        (
            ScalarField::from_raw(&self.grid, re),
            ScalarField::from_raw(&self.grid, im),
        )
    }

    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n();
        self.data.iter().fold(0.0, |d, m| d.max(hermitian_defect(n, m)))
    }

    /// Largest `|a_{αβ} − a_{βα}|` over the grid.
    pub fn symmetry_defect(&self) -> f64 {
        self.data.iter().fold(0.0, |d, m| d.max((m[0][1] - m[1][0]).norm()))
    }

    pub fn sup_norm(&self) -> f64 {
        let n = self.n();
        self.data.iter().fold(0.0, |d, m| {
            let mut s: f64 = d;
            for i in 0..n {
                for j in 0..n {
                    s = s.max(m[i][j].norm());
                }
            }
            s
        })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.n();
        self.data
            .iter()
            .fold(f64::INFINITY, |e, m| e.min(min_eigenvalue(n, m)))
    }

    /// Pointwise real scalar extracted by `f`.
    pub fn scalar(&self, f: impl Fn(&Mat) -> f64) -> ScalarField {
        ScalarField::from_raw(&self.grid, self.data.iter().map(f).collect())
    }
}
