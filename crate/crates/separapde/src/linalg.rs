//! Dense SVD by one-sided Jacobi rotations.
//!
//! Small and extremely robust: singular values come out with high relative
//! accuracy, including on (near-)constant and rank-deficient inputs. All
//! SVD consumers in the crate route through here.

use nalgebra::DMatrix;

/// Thin SVD `A = U Σ V^T` with singular values sorted descending.
pub struct Svd {
    /// m × k, orthonormal columns (k = min(m, n))
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// n × k, orthonormal columns
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi SVD. Iterates plane rotations that orthogonalize the
/// columns of `A`; converged column norms are the singular values.
pub fn jacobi_svd(a: &DMatrix<f64>) -> Svd {
    if a.nrows() < a.ncols() {
        let t = jacobi_svd(&a.transpose());
        return Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }
    let (m, n) = (a.nrows(), a.ncols());
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let eps = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let mut u = DMatrix::<f64>::zeros(m, n);
    let mut sigma = Vec::with_capacity(n);
    let mut vs = DMatrix::<f64>::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > 0.0 {
            for i in 0..m {
                u[(i, k)] = w[(i, j)] / s;
            }
        }
        for i in 0..n {
            vs[(i, k)] = v[(i, j)];
        }
    }
    Svd { u, sigma, v: vs }
}

/// Minimum-norm least-squares solve through the Jacobi SVD, dropping
/// singular values at or below `rel_tol * σ_max`.
pub fn pseudo_solve(a: &DMatrix<f64>, b: &nalgebra::DVector<f64>, rel_tol: f64) -> nalgebra::DVector<f64> {
    let svd = jacobi_svd(a);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let mut x = nalgebra::DVector::zeros(a.ncols());
    for (k, &s) in svd.sigma.iter().enumerate() {
        if s <= rel_tol * smax || s == 0.0 {
            continue;
        }
        let coef = svd.u.column(k).dot(b) / s;
        x += svd.v.column(k) * coef;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruction_error(a: &DMatrix<f64>, svd: &Svd) -> f64 {
        let k = svd.sigma.len();
        let mut r = a.clone();
        for q in 0..k {
            let u = svd.u.column(q);
            let v = svd.v.column(q);
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    r[(i, j)] -= svd.sigma[q] * u[i] * v[j];
                }
            }
        }
        r.abs().max()
    }

    #[test]
    fn constant_matrix_is_rank_one() {
        // the case that defeats less careful SVDs: constant up to 1 ulp
        let mut a = DMatrix::from_element(16, 12, 1.0);
        a[(3, 4)] = 0.9999999999999998;
        let svd = jacobi_svd(&a);
        let fro = a.norm();
        assert!(svd.sigma[0] <= fro * (1.0 + 1e-12), "σ1 {} > ‖A‖_F {fro}", svd.sigma[0]);
        assert!(svd.sigma[1] <= 1e-12 * svd.sigma[0]);
        assert!(reconstruction_error(&a, &svd) < 1e-13);
    }

    #[test]
    fn random_matrices_reconstruct_and_are_orthonormal() {
        let mut state = 0x12345678u64;
        let mut rnd = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        };
        for (m, n) in [(7usize, 5usize), (5, 9), (12, 12)] {
            let a = DMatrix::from_fn(m, n, |_, _| rnd());
            let svd = jacobi_svd(&a);
            let scale = svd.sigma[0];
            assert!(reconstruction_error(&a, &svd) <= 1e-13 * scale.max(1.0));
            let utu = svd.u.transpose() * &svd.u;
            let vtv = svd.v.transpose() * &svd.v;
            let k = svd.sigma.len();
            for i in 0..k {
                for j in 0..k {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((utu[(i, j)] - expect).abs() < 1e-12);
                    assert!((vtv[(i, j)] - expect).abs() < 1e-12);
                }
            }
            for w in svd.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn rank_deficient_matrix() {
        // rank 2 by construction
        let u1 = DMatrix::from_fn(8, 1, |i, _| (i as f64 + 1.0).sin());
        let u2 = DMatrix::from_fn(8, 1, |i, _| (i as f64 * 0.3).cos());
        let v1 = DMatrix::from_fn(6, 1, |i, _| (i as f64 - 2.0) * 0.1);
        let v2 = DMatrix::from_fn(6, 1, |i, _| (i as f64).powi(2) * 0.01 + 1.0);
        let a = &u1 * v1.transpose() + &u2 * v2.transpose();
        let svd = jacobi_svd(&a);
        assert!(svd.sigma[2] <= 1e-13 * svd.sigma[0]);
        assert!(reconstruction_error(&a, &svd) <= 1e-13 * svd.sigma[0]);
    }

    #[test]
    fn pseudo_solve_minimizes_residual_on_singular_system() {
        // consistent singular system: A = outer product, b in range
        let u = nalgebra::DVector::from_fn(5, |i, _| 1.0 + i as f64);
        let a = &u * u.transpose();
        let b = &a * nalgebra::DVector::from_element(5, 2.0);
        let x = pseudo_solve(&a, &b, 1e-12);
        let r = &a * &x - &b;
        assert!(r.norm() <= 1e-10 * b.norm());
    }
}
