//! 1D grids, tensor-product meshes, and linear hat shape functions.
//!
//! Hats are provided in closed form and in the two-branch ReLU composition
//! used by adaptive interpolants, together with derivatives in the space
//! variable and in the nodal positions. The nodal-position derivatives are
//! what makes r-adaptivity differentiable.

use crate::error::{Error, Result};

/// Relative minimum element size: gaps below `MIN_GAP_REL * (b - a)` are
/// rejected whenever nodal positions move.
pub const MIN_GAP_REL: f64 = 1e-6;

/// Sorted 1D nodes with fixed endpoints.
///
/// `movable[i]` marks which nodes an adaptive solver may relocate; the
/// endpoints are always pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    nodes: Vec<f64>,
    movable: Vec<bool>,
}

impl Grid1D {
    /// Build a uniform grid of `n` nodes on `[a, b]` with exact endpoints.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidRange(format!("need a < b, got [{a}, {b}]")));
        }
        if n < 2 {
            return Err(Error::InvalidRange(format!("need n >= 2, got {n}")));
        }
        let h = (b - a) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| a + h * i as f64).collect();
        nodes[0] = a;
        nodes[n - 1] = b;
        Self::from_nodes(nodes)
    }

    /// Build a grid from explicit node coordinates (strictly increasing).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidRange(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidRange(
                "nodes must be strictly increasing".into(),
            ));
        }
        let n = nodes.len();
        let mut movable = vec![true; n];
        movable[0] = false;
        movable[n - 1] = false;
        Ok(Self { nodes, movable })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of interior (non-endpoint) nodes.
    pub fn interior_len(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn a(&self) -> f64 {
        self.nodes[0]
    }

    pub fn b(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn span(&self) -> f64 {
        self.b() - self.a()
    }

    /// Minimum admissible gap for this grid's domain.
    pub fn min_gap(&self) -> f64 {
        MIN_GAP_REL * self.span()
    }

    pub fn is_movable(&self, i: usize) -> bool {
        self.movable[i]
    }

    /// Element sizes `h_e = x_{e+1} - x_e`.
    pub fn element_sizes(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn num_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Replace the interior node positions, keeping endpoints fixed.
    ///
    /// Rejects configurations that violate monotonicity with the minimum-gap
    /// margin; adaptive solvers project onto the feasible set before calling
    /// this.
    pub fn set_interior(&mut self, interior: &[f64]) -> Result<()> {
        if interior.len() != self.interior_len() {
            return Err(Error::InvalidRange(format!(
                "expected {} interior nodes, got {}",
                self.interior_len(),
                interior.len()
            )));
        }
        let eps = self.min_gap();
        let mut prev = self.a();
        for (k, &x) in interior.iter().enumerate() {
            if !(x - prev >= eps * (1.0 - 1e-9)) {
                return Err(Error::InvalidRange(format!(
                    "gap {} before interior node {k} below minimum {eps}",
                    x - prev
                )));
            }
            prev = x;
        }
        if !(self.b() - prev >= eps * (1.0 - 1e-9)) {
            return Err(Error::InvalidRange(format!(
                "gap {} at right endpoint below minimum {eps}",
                self.b() - prev
            )));
        }
        let n = self.nodes.len();
        self.nodes[1..n - 1].copy_from_slice(interior);
        Ok(())
    }

    /// Index of the element containing `x`, clamped to `[0, n-2]`.
    pub fn element_of(&self, x: f64) -> usize {
        // partition_point returns the first node > x
        let k = self.nodes.partition_point(|&v| v <= x);
        k.saturating_sub(1).min(self.nodes.len() - 2)
    }

    /// Shape-function support of node `i` (half-hats at the endpoints).
    pub fn support(&self, i: usize) -> ShapeSupport {
        ShapeSupport {
            left: if i > 0 { Some(self.nodes[i - 1]) } else { None },
            center: self.nodes[i],
            right: self.nodes.get(i + 1).copied(),
        }
    }

    /// Evaluate all shape functions at `x`: at most two are nonzero.
    /// Returns (left node index, value at left node, value at right node).
    pub fn hat_pair(&self, x: f64) -> (usize, f64, f64) {
        let e = self.element_of(x);
        let (xl, xr) = (self.nodes[e], self.nodes[e + 1]);
        let t = (x - xl) / (xr - xl);
        (e, 1.0 - t, t)
    }
}

/// Support of one linear hat: the node and its immediate neighbors.
/// Boundary hats drop the missing neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSupport {
    pub left: Option<f64>,
    pub center: f64,
    pub right: Option<f64>,
}

impl ShapeSupport {
    pub fn interior(left: f64, center: f64, right: f64) -> Result<Self> {
        if !(left < center && center < right) {
            return Err(Error::InvalidRange(format!(
                "support must be strictly increasing, got [{left}, {center}, {right}]"
            )));
        }
        Ok(Self {
            left: Some(left),
            center,
            right: Some(right),
        })
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Piecewise-linear hat value; 0 outside the support.
pub fn hat_eval(s: &ShapeSupport, x: f64) -> f64 {
    if x == s.center {
        return 1.0;
    }
    if x < s.center {
        match s.left {
            Some(l) if x > l => (x - l) / (s.center - l),
            _ => 0.0,
        }
    } else {
        match s.right {
            Some(r) if x < r => (r - x) / (r - s.center),
            _ => 0.0,
        }
    }
}

/// Hat value through the two-branch ReLU composition
/// `A(-1/(x_I - x_{I-1}) A(-x + x_I) + 1) + A(-1/(x_{I+1} - x_I) A(x - x_I) + 1) - 1`
/// with `A = max(0, .)`.
///
/// Half-hats keep only the surviving branch; the composition then agrees
/// with the closed form on the domain side of the center node.
pub fn hat_eval_relu(s: &ShapeSupport, x: f64) -> f64 {
    match (s.left, s.right) {
        (Some(l), Some(r)) => {
            let branch_l = relu(-1.0 / (s.center - l) * relu(-x + s.center) + 1.0);
            let branch_r = relu(-1.0 / (r - s.center) * relu(x - s.center) + 1.0);
            branch_l + branch_r - 1.0
        }
        (None, Some(r)) => relu(-1.0 / (r - s.center) * relu(x - s.center) + 1.0),
        (Some(l), None) => relu(-1.0 / (s.center - l) * relu(-x + s.center) + 1.0),
        (None, None) => 1.0,
    }
}

/// Derivative of the hat in `x`: piecewise constant, right-limit at
/// breakpoints (left-limit at a right-boundary center so the value at the
/// final grid node stays the in-element slope).
pub fn hat_deriv_x(s: &ShapeSupport, x: f64) -> f64 {
    match (s.left, s.right) {
        (Some(l), Some(r)) => {
            if x < l || x >= r {
                0.0
            } else if x < s.center {
                1.0 / (s.center - l)
            } else {
                -1.0 / (r - s.center)
            }
        }
        (None, Some(r)) => {
            if x >= s.center && x < r {
                -1.0 / (r - s.center)
            } else {
                0.0
            }
        }
        (Some(l), None) => {
            if x >= l && x <= s.center {
                1.0 / (s.center - l)
            } else {
                0.0
            }
        }
        (None, None) => 0.0,
    }
}

/// Partial derivatives of the hat value w.r.t. the three support
/// coordinates `(x_{I-1}, x_I, x_{I+1})`, holding `x` fixed.
///
/// Right-limit convention at element boundaries. Missing neighbors of
/// half-hats yield zero partials.
pub fn hat_grad_nodes(s: &ShapeSupport, x: f64) -> (f64, f64, f64) {
    // Rising branch N = (x - l)/(c - l) on [l, c):
    //   dN/dl = (x - c)/(c - l)^2,  dN/dc = -(x - l)/(c - l)^2
    // Falling branch N = (r - x)/(r - c) on [c, r):
    //   dN/dc = (r - x)/(r - c)^2,  dN/dr = (x - c)/(r - c)^2
    match (s.left, s.right) {
        (Some(l), Some(r)) => {
            if x < l || x >= r {
                (0.0, 0.0, 0.0)
            } else if x < s.center {
                let d = s.center - l;
                ((x - s.center) / (d * d), -(x - l) / (d * d), 0.0)
            } else {
                let d = r - s.center;
                (0.0, (r - x) / (d * d), (x - s.center) / (d * d))
            }
        }
        (None, Some(r)) => {
            if x >= s.center && x < r {
                let d = r - s.center;
                (0.0, (r - x) / (d * d), (x - s.center) / (d * d))
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        (Some(l), None) => {
            if x >= l && x <= s.center {
                let d = s.center - l;
                ((x - s.center) / (d * d), -(x - l) / (d * d), 0.0)
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        (None, None) => (0.0, 0.0, 0.0),
    }
}

/// Tensor-product mesh of 2 or 3 independent 1D grids.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMesh {
    axes: Vec<Grid1D>,
}

impl TensorMesh {
    pub fn new(axes: Vec<Grid1D>) -> Result<Self> {
        if axes.len() != 2 && axes.len() != 3 {
            return Err(Error::InvalidRange(format!(
                "tensor mesh needs 2 or 3 axes, got {}",
                axes.len()
            )));
        }
        Ok(Self { axes })
    }

    pub fn d2(x: Grid1D, y: Grid1D) -> Self {
        Self { axes: vec![x, y] }
    }

    pub fn d3(x: Grid1D, y: Grid1D, z: Grid1D) -> Self {
        Self {
            axes: vec![x, y, z],
        }
    }

    /// Uniform mesh on the unit square/cube with `n[k]` nodes per axis.
    pub fn unit_uniform(n: &[usize]) -> Result<Self> {
        let axes = n
            .iter()
            .map(|&nk| Grid1D::uniform(0.0, 1.0, nk))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Grid1D] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Grid1D {
        &self.axes[k]
    }

    pub fn axis_mut(&mut self, k: usize) -> &mut Grid1D {
        &mut self.axes[k]
    }

    /// Node counts per axis.
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|g| g.len()).collect()
    }

    /// Interior node counts per axis.
    pub fn interior_shape(&self) -> Vec<usize> {
        self.axes.iter().map(|g| g.interior_len()).collect()
    }

    /// True when both meshes cover the same box.
    pub fn same_domain(&self, other: &TensorMesh) -> bool {
        self.dim() == other.dim()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| {
                (a.a() - b.a()).abs() <= 1e-14 * a.span().max(1.0)
                    && (a.b() - b.b()).abs() <= 1e-14 * a.span().max(1.0)
            })
    }
}

/// Convenience constructor matching the spec's operation surface.
pub fn build_uniform_grid(a: f64, b: f64, n: usize) -> Result<Grid1D> {
    Grid1D::uniform(a, b, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn support_unit() -> ShapeSupport {
        ShapeSupport::interior(0.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn uniform_grid_endpoints_only() {
        let g = Grid1D::uniform(0.0, 1.0, 2).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0]);
    }

    #[test]
    fn uniform_grid_five_nodes() {
        let g = Grid1D::uniform(0.0, 1.0, 5).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn uniform_grid_41_nodes_gives_40_elements() {
        let g = Grid1D::uniform(0.0, 1.0, 41).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g.num_elements(), 40);
        for h in g.element_sizes() {
            assert!((h - 0.025).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_grid_rejects_bad_input() {
        assert!(Grid1D::uniform(1.0, 0.0, 5).is_err());
        assert!(Grid1D::uniform(0.0, 1.0, 1).is_err());
        assert!(Grid1D::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn endpoints_never_movable() {
        let g = Grid1D::uniform(0.0, 1.0, 4).unwrap();
        assert!(!g.is_movable(0));
        assert!(g.is_movable(1));
        assert!(g.is_movable(2));
        assert!(!g.is_movable(3));
    }

    #[test]
    fn set_interior_enforces_min_gap() {
        let mut g = Grid1D::uniform(0.0, 1.0, 4).unwrap();
        assert!(g.set_interior(&[0.2, 0.2 + 1e-9]).is_err());
        assert!(g.set_interior(&[0.2, 0.9]).is_ok());
        assert_eq!(g.nodes(), &[0.0, 0.2, 0.9, 1.0]);
    }

    #[test]
    fn hat_kronecker_delta_and_midpoints() {
        let s = support_unit();
        assert_eq!(hat_eval(&s, 0.5), 1.0);
        assert_eq!(hat_eval(&s, 0.25), 0.5);
        assert_eq!(hat_eval(&s, 1.2), 0.0);
        assert_eq!(hat_eval(&s, -0.1), 0.0);
    }

    #[test]
    fn relu_form_matches_spec_points() {
        let s = support_unit();
        assert_eq!(hat_eval_relu(&s, 0.5), 1.0);
        assert_eq!(hat_eval_relu(&s, 0.75), 0.5);
    }

    #[test]
    fn relu_form_equals_closed_form_everywhere() {
        let s = ShapeSupport::interior(0.13, 0.41, 0.97).unwrap();
        let mut x = -0.5;
        while x <= 1.5 {
            let a = hat_eval(&s, x);
            let b = hat_eval_relu(&s, x);
            assert!((a - b).abs() <= 1e-14, "mismatch at {x}: {a} vs {b}");
            x += 0.0007;
        }
    }

    #[test]
    fn hat_deriv_x_values() {
        let s = support_unit();
        assert_eq!(hat_deriv_x(&s, 0.25), 2.0);
        assert_eq!(hat_deriv_x(&s, 0.75), -2.0);
        assert_eq!(hat_deriv_x(&s, 1.5), 0.0);
        // right-limit at breakpoints
        assert_eq!(hat_deriv_x(&s, 0.0), 2.0);
        assert_eq!(hat_deriv_x(&s, 0.5), -2.0);
        assert_eq!(hat_deriv_x(&s, 1.0), 0.0);
    }

    #[test]
    fn boundary_half_hat_derivative_keeps_left_limit_at_final_node() {
        let g = Grid1D::uniform(0.0, 1.0, 3).unwrap();
        let s = g.support(2);
        assert_eq!(hat_deriv_x(&s, 1.0), 2.0);
        assert_eq!(hat_deriv_x(&s, 0.75), 2.0);
    }

    #[test]
    fn hat_grad_nodes_spec_example() {
        let s = support_unit();
        let (dl, dc, dr) = hat_grad_nodes(&s, 0.25);
        assert!((dc - (-1.0)).abs() < 1e-15);
        assert_eq!(dr, 0.0);
        // dN/dl = (x - c)/(c - l)^2 = (0.25 - 0.5)/0.25 = -1
        assert!((dl - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn hat_grad_nodes_matches_finite_differences() {
        let step = 1e-6;
        let pts = [0.07, 0.21, 0.33, 0.48, 0.52, 0.66, 0.81, 0.94];
        let (l0, c0, r0) = (0.05, 0.5, 0.95);
        for &x in &pts {
            let s = ShapeSupport::interior(l0, c0, r0).unwrap();
            let exact = hat_grad_nodes(&s, x);
            let fd = |f: &dyn Fn(f64) -> ShapeSupport| {
                (hat_eval(&f(step), x) - hat_eval(&f(-step), x)) / (2.0 * step)
            };
            let fd_l = fd(&|d| ShapeSupport::interior(l0 + d, c0, r0).unwrap());
            let fd_c = fd(&|d| ShapeSupport::interior(l0, c0 + d, r0).unwrap());
            let fd_r = fd(&|d| ShapeSupport::interior(l0, c0, r0 + d).unwrap());
            for (a, b) in [(exact.0, fd_l), (exact.1, fd_c), (exact.2, fd_r)] {
                let scale = a.abs().max(1.0);
                assert!(
                    (a - b).abs() <= 1e-6 * scale,
                    "x={x}: analytic {a} vs fd {b}"
                );
            }
        }
    }

    #[test]
    fn partition_of_unity_on_random_grid() {
        let g =
            Grid1D::from_nodes(vec![0.0, 0.11, 0.19, 0.42, 0.55, 0.78, 0.91, 1.0]).unwrap();
        let mut x = 0.0;
        while x <= 1.0 {
            let sum: f64 = (0..g.len()).map(|i| hat_eval(&g.support(i), x)).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "PoU failed at {x}: {sum}");
            x += 0.00317;
        }
    }

    #[test]
    fn element_of_handles_boundaries() {
        let g = Grid1D::uniform(0.0, 1.0, 5).unwrap();
        assert_eq!(g.element_of(0.0), 0);
        assert_eq!(g.element_of(0.25), 1);
        assert_eq!(g.element_of(0.999), 3);
        assert_eq!(g.element_of(1.0), 3);
    }

    #[test]
    fn tensor_mesh_dims() {
        assert!(TensorMesh::unit_uniform(&[3, 4]).is_ok());
        assert!(TensorMesh::unit_uniform(&[3, 4, 5]).is_ok());
        assert!(TensorMesh::unit_uniform(&[3]).is_err());
        assert!(TensorMesh::unit_uniform(&[3, 4, 5, 6]).is_err());
    }
}
