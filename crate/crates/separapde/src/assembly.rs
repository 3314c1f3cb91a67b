//! 1D mass/stiffness matrices and Gauss quadrature.
//!
//! Every solver in the crate reduces its multi-dimensional integrals to the
//! 1D factors assembled here. Matrix assembly is exact (closed form for
//! linear hats); only the source term needs quadrature.

use crate::error::{Error, Result};
use crate::mesh::Grid1D;
use crate::source::{AxisFn, SourceTerm};

/// Symmetric tridiagonal matrix stored by diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriDiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl TriDiag {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * x[i + 1];
            }
            y[i] = v;
        }
        y
    }

    /// Quadratic/bilinear form `x^T A y`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.len();
        let mut s = 0.0;
        for i in 0..n {
            s += x[i] * self.diag[i] * y[i];
            if i + 1 < n {
                s += self.off[i] * (x[i] * y[i + 1] + x[i + 1] * y[i]);
            }
        }
        s
    }

    /// `self + c * other`, entrywise.
    pub fn add_scaled(&self, c: f64, other: &TriDiag) -> TriDiag {
        let mut out = self.clone();
        for (a, b) in out.diag.iter_mut().zip(&other.diag) {
            *a += c * b;
        }
        for (a, b) in out.off.iter_mut().zip(&other.off) {
            *a += c * b;
        }
        out
    }

    pub fn scale(&self, c: f64) -> TriDiag {
        TriDiag {
            diag: self.diag.iter().map(|v| c * v).collect(),
            off: self.off.iter().map(|v| c * v).collect(),
        }
    }

    /// Submatrix over rows/cols `lo..hi` (used to restrict to interior nodes).
    pub fn slice(&self, lo: usize, hi: usize) -> TriDiag {
        TriDiag {
            diag: self.diag[lo..hi].to_vec(),
            off: self.off[lo..hi.saturating_sub(1)].to_vec(),
        }
    }

    /// Solve `A x = b` by LDL^T factorization (Thomas algorithm).
    /// Requires positive definiteness; fails on a non-positive pivot.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        assert_eq!(b.len(), n);
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        d[0] = self.diag[0];
        if d[0] <= 0.0 {
            return Err(Error::DegenerateData(
                "non-positive pivot in tridiagonal solve".into(),
            ));
        }
        for i in 1..n {
            l[i - 1] = self.off[i - 1] / d[i - 1];
            d[i] = self.diag[i] - l[i - 1] * self.off[i - 1];
            if d[i] <= 0.0 {
                return Err(Error::DegenerateData(
                    "non-positive pivot in tridiagonal solve".into(),
                ));
            }
        }
        let mut x = b.to_vec();
        for i in 1..n {
            x[i] -= l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= l[i] * x[i + 1];
        }
        Ok(x)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }
}

/// Gauss–Legendre rule of order `g` on the reference interval [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    /// Nodes and weights via Newton iteration on the Legendre polynomial.
    /// Exact for polynomials of degree <= 2g - 1.
    pub fn gauss(g: usize) -> Self {
        assert!(g >= 1, "quadrature order must be at least 1");
        let mut points = vec![0.0; g];
        let mut weights = vec![0.0; g];
        let n = g;
        for k in 0..n.div_ceil(2) {
            // Chebyshev-based initial guess
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                // Legendre recurrence for P_n(x) and P'_n(x)
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let jf = j as f64;
                    let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                    p0 = p1;
                    p1 = p2;
                }
                let p = if n == 1 { x } else { p1 };
                dp = n as f64 * (x * p - p0) / (x * x - 1.0);
                if n == 1 {
                    dp = 1.0;
                }
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points[k] = -x;
            points[n - 1 - k] = x;
            weights[k] = w;
            weights[n - 1 - k] = w;
        }
        if n % 2 == 1 {
            // Center the middle node exactly
            points[n / 2] = 0.0;
        }
        Self { points, weights }
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// Map the rule to the element `[a, b]`: returns (points, weights).
    pub fn mapped(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        (
            self.points.iter().map(|&t| mid + half * t).collect(),
            self.weights.iter().map(|&w| w * half).collect(),
        )
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (pts, wts) = self.mapped(a, b);
        pts.iter().zip(&wts).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Default Gauss order for source integration.
pub const DEFAULT_GAUSS_ORDER: usize = 4;

/// 1D stiffness matrix: entries `∫ N'_I N'_J dx`, assembled in closed form.
pub fn stiffness_1d(grid: &Grid1D) -> TriDiag {
    let n = grid.len();
    let mut m = TriDiag::zeros(n);
    for (e, h) in grid.element_sizes().iter().enumerate() {
        let k = 1.0 / h;
        m.diag[e] += k;
        m.diag[e + 1] += k;
        m.off[e] -= k;
    }
    m
}

/// 1D mass matrix: entries `∫ N_I N_J dx`: `h/3` per adjacent element on
/// the diagonal, `h/6` off-diagonal.
pub fn mass_1d(grid: &Grid1D) -> TriDiag {
    let n = grid.len();
    let mut m = TriDiag::zeros(n);
    for (e, h) in grid.element_sizes().iter().enumerate() {
        m.diag[e] += h / 3.0;
        m.diag[e + 1] += h / 3.0;
        m.off[e] += h / 6.0;
    }
    m
}

/// Per-axis load vector for one smooth factor: `f[I] = ∫ N_I(x) b(x) dx`
/// by per-element Gauss quadrature.
pub fn load_axis(grid: &Grid1D, b: &AxisFn, rule: &QuadRule) -> Vec<f64> {
    let mut f = vec![0.0; grid.len()];
    let nodes = grid.nodes();
    for e in 0..grid.num_elements() {
        let (xl, xr) = (nodes[e], nodes[e + 1]);
        let half = 0.5 * (xr - xl);
        for (t, w) in rule.points.iter().zip(&rule.weights) {
            let x = 0.5 * (xl + xr) + half * t;
            let bw = w * half * b.eval(x);
            // the two hats alive on this element, in local coordinates
            f[e] += bw * 0.5 * (1.0 - t);
            f[e + 1] += bw * 0.5 * (1.0 + t);
        }
    }
    f
}

/// Derivative of `load_axis` w.r.t. the nodal positions.
///
/// Both the element measure and the Gauss points move with the nodes:
/// `x_g = (x_l + x_r)/2 + ξ (x_r - x_l)/2`, so
/// `∂x_g/∂x_l = (1-ξ)/2` and `∂x_g/∂x_r = (1+ξ)/2`.
/// Returns a dense n×n matrix-free accumulation: `out[k][i] = ∂f_i/∂x_k`
/// is sparse (only i ∈ {k-1, k, k+1}), stored as three bands like TriDiag
/// but asymmetric: (sub, diag, super) with `sub[k-1] = ∂f_{k-1}/∂x_k` being
/// band `lower`, etc. For simplicity a full tridiagonal band triple is
/// returned: (lower[k] = ∂f_k/∂x_{k+1}, diag[k] = ∂f_k/∂x_k,
/// upper[k] = ∂f_{k+1}/∂x_k ... ).
pub struct LoadGrad {
    /// ∂f_k/∂x_k
    pub diag: Vec<f64>,
    /// ∂f_k/∂x_{k+1}
    pub wrt_right: Vec<f64>,
    /// ∂f_{k+1}/∂x_k
    pub wrt_left: Vec<f64>,
}

pub fn load_axis_grad(grid: &Grid1D, b: &AxisFn, rule: &QuadRule) -> LoadGrad {
    let n = grid.len();
    let mut diag = vec![0.0; n];
    let mut wrt_right = vec![0.0; n - 1];
    let mut wrt_left = vec![0.0; n - 1];
    let nodes = grid.nodes();
    for e in 0..grid.num_elements() {
        let (xl, xr) = (nodes[e], nodes[e + 1]);
        let half = 0.5 * (xr - xl);
        for (t, w) in rule.points.iter().zip(&rule.weights) {
            let x = 0.5 * (xl + xr) + half * t;
            let bv = b.eval(x);
            let dbv = b.deriv(x);
            let n_l = 0.5 * (1.0 - t);
            let n_r = 0.5 * (1.0 + t);
            // d(half)/dxl = -1/2, d(half)/dxr = +1/2; dx/dxl = n_l, dx/dxr = n_r
            let d_dxl = w * (-0.5 * bv + half * dbv * n_l);
            let d_dxr = w * (0.5 * bv + half * dbv * n_r);
            // contribution f[e] += w*half*b(x)*n_l ; f[e+1] += w*half*b(x)*n_r
            diag[e] += d_dxl * n_l;
            wrt_right[e] += d_dxr * n_l; // ∂f_e/∂x_{e+1}
            wrt_left[e] += d_dxl * n_r; // ∂f_{e+1}/∂x_e
            diag[e + 1] += d_dxr * n_r;
        }
    }
    LoadGrad {
        diag,
        wrt_right,
        wrt_left,
    }
}

/// Separated load structure: one vector per axis per smooth term,
/// plus the point loads passed through for tensor pairing.
pub struct SeparatedLoad {
    /// `factors[s][axis][node]`
    pub factors: Vec<Vec<Vec<f64>>>,
}

/// Assemble per-axis load vectors `f_x^(s)[I] = ∫ N_I(x) b_x^(s)(x) dx`
/// for every separable term of `source`.
///
/// Point loads are not expanded here; they pair against shape functions at
/// their location (Kronecker delta when exactly at a node) and are handled
/// by the consumers via [`SourceTerm::point_loads`].
pub fn load_separated(
    grids: &[&Grid1D],
    source: &SourceTerm,
    rule: &QuadRule,
) -> Result<SeparatedLoad> {
    if source.dim() != grids.len() {
        return Err(Error::UnsupportedSource(format!(
            "{}-D source on a {}-D mesh",
            source.dim(),
            grids.len()
        )));
    }
    let mut factors = Vec::with_capacity(source.terms().len());
    for term in source.terms() {
        let per_axis: Vec<Vec<f64>> = grids
            .iter()
            .zip(&term.axes)
            .map(|(g, a)| load_axis(g, a, rule))
            .collect();
        factors.push(per_axis);
    }
    Ok(SeparatedLoad { factors })
}
