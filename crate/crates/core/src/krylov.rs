//! Restarted GMRES on plain `f64` vectors.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresSettings {
    /// Stop when `‖b − Ax‖ ≤ rel_tol·‖b‖`.
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final residual relative to `‖b‖`.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` from `x = 0`. `apply` may fail, which aborts the solve.
pub fn gmres<E>(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    b: &[f64],
    settings: &GmresSettings,
) -> Result<GmresOutcome, E> {
    let len = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; len];
    if b_norm == 0.0 {
        return Ok(GmresOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let m = settings.restart.max(1);
    let mut iterations = 0;
    let mut r = b.to_vec();
    let mut rel = 1.0;
    while iterations < settings.max_iter {
        let beta = norm(&r);
        rel = beta / b_norm;
        if rel <= settings.rel_tol {
            break;
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Hessenberg columns, already rotated
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut rotations: Vec<(f64, f64)> = Vec::with_capacity(m);
        let mut g = vec![beta];
        for j in 0..m {
            if iterations >= settings.max_iter {
                break;
            }
            iterations += 1;
            let mut w = apply(&basis[j])?;
            let mut col = vec![0.0; j + 2];
            // modified Gram–Schmidt, twice for stability
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = dot(&w, q);
                    col[i] += c;
                    w.iter_mut().zip(q).for_each(|(wv, qv)| *wv -= c * qv);
                }
            }
            let w_norm = norm(&w);
            col[j + 1] = w_norm;
            for (i, &(c, s)) in rotations.iter().enumerate() {
                let (a, b) = (col[i], col[i + 1]);
                col[i] = c * a + s * b;
                col[i + 1] = -s * a + c * b;
            }
            let (a, bb) = (col[j], col[j + 1]);
            let rho = a.hypot(bb);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, bb / rho) };
            col[j] = rho;
            col[j + 1] = 0.0;
            rotations.push((c, s));
            g.push(-s * g[j]);
            g[j] *= c;
            h.push(col);
            rel = g[j + 1].abs() / b_norm;
            if rel <= settings.rel_tol || w_norm <= 1e-14 * beta {
                break;
            }
            basis.push(w.iter().map(|v| v / w_norm).collect());
        }
        // back substitution for the cycle's coefficients
        let k = h.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in (i + 1)..k {
                s -= h[l][i] * y[l];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (yi, q) in y.iter().zip(&basis) {
            x.iter_mut().zip(q).for_each(|(xv, qv)| *xv += yi * qv);
        }
        let ax = apply(&x)?;
        r = b.iter().zip(&ax).map(|(bv, av)| bv - av).collect();
        rel = norm(&r) / b_norm;
        if rel <= settings.rel_tol || k == 0 {
            break;
        }
    }
    Ok(GmresOutcome {
        converged: rel <= settings.rel_tol,
        x,
        iterations,
        relative_residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| dot(row, x)).collect()
    }

    #[test]
    fn solves_nonsymmetric_system() {
        let n = 30;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match (i as isize - j as isize).abs() {
                        0 => 4.0 + i as f64 * 0.1,
                        1 if j > i => 1.3,
                        1 => -0.7,
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        let exact: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = matvec(&a, &exact);
        for restart in [5, 40] {
            let settings = GmresSettings {
                rel_tol: 1e-12,
                restart,
                max_iter: 500,
            };
            let out = gmres(|v| Ok::<_, Infallible>(matvec(&a, v)), &b, &settings).unwrap();
            assert!(out.converged);
            let err = exact.iter().zip(&out.x).map(|(e, x)| (e - x).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "restart {restart}: {err}");
        }
    }

    #[test]
    fn zero_rhs_and_budget() {
        let settings = GmresSettings {
            rel_tol: 1e-12,
            restart: 3,
            max_iter: 2,
        };
        let out = gmres(|v| Ok::<_, Infallible>(v.to_vec()), &[0.0; 4], &settings).unwrap();
        assert_eq!(out.iterations, 0);
        // a rotation needs n steps; two are not enough
        let rot = |v: &[f64]| Ok::<_, Infallible>(vec![v[3], v[0], v[1], v[2]]);
        let out = gmres(rot, &[1.0, 0.0, 0.0, 0.0], &settings).unwrap();
        assert!(!out.converged);
        assert!(out.iterations <= 2);
    }
}
