//! Space-separated PGD on irregular 2D domains.
//!
//! A structured quad mesh over the physical domain is mapped to a unit
//! lattice (`x̃_i = i`) through the standard bilinear element mapping. On
//! the lattice, the pulled-back Laplacian carries the metric
//! `G = J^{-T} J^{-1} det J`, which is generally not separable; each of its
//! entries (and the measure `det J`) is sampled on the tensor Gauss grid
//! and SVD-separated so that every 2D integral in the alternating-direction
//! solver factors into 1D quadratures weighted by the metric modes.
//!
//! On an axis-aligned rectangular mesh the metric is constant per element
//! and rank 1, and the solver reproduces the plain fixed-mesh PGD exactly.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assembly::{QuadRule, TriDiag, DEFAULT_GAUSS_ORDER};
use crate::error::{Error, Result};
use crate::fem::EnergyValue;
use crate::mesh::{Grid1D, TensorMesh};
use crate::separated::{normalize_mode, Mode, SeparatedSolution};
use crate::source::SourceTerm;

/// Structured quad mesh over a physical 2D domain, indexed like the
/// reference lattice `(i, j) ∈ [0, n1) × [0, n2)` with lattice coordinates
/// `x̃ = i + 1`, `ỹ = j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedDomain {
    n1: usize,
    n2: usize,
    /// row-major physical coordinates: `nodes[i * n2 + j] = (x, y)`
    nodes: Vec<(f64, f64)>,
}

impl MappedDomain {
    pub fn new(n1: usize, n2: usize, nodes: Vec<(f64, f64)>) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::InvalidRange(
                "mapped domain needs at least 2 nodes per direction".into(),
            ));
        }
        if nodes.len() != n1 * n2 {
            return Err(Error::InvalidRange(format!(
                "expected {} nodes, got {}",
                n1 * n2,
                nodes.len()
            )));
        }
        let d = Self { n1, n2, nodes };
        d.check_orientation()?;
        Ok(d)
    }

    /// Axis-aligned rectangle `[0, w] × [0, h]` with uniform spacing.
    pub fn rectangle(n1: usize, n2: usize, w: f64, h: f64) -> Result<Self> {
        let mut nodes = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                nodes.push((
                    w * i as f64 / (n1 - 1) as f64,
                    h * j as f64 / (n2 - 1) as f64,
                ));
            }
        }
        Self::new(n1, n2, nodes)
    }

    /// Quarter ring `r ∈ [r0, r1]`, `θ ∈ [0, π/2]`; axis 0 is radial,
    /// axis 1 angular (this ordering keeps `det J > 0`).
    pub fn quarter_ring(n_r: usize, n_theta: usize, r0: f64, r1: f64) -> Result<Self> {
        if !(0.0 < r0 && r0 < r1) {
            return Err(Error::InvalidRange("need 0 < r0 < r1".into()));
        }
        let mut nodes = Vec::with_capacity(n_r * n_theta);
        for i in 0..n_r {
            let r = r0 + (r1 - r0) * i as f64 / (n_r - 1) as f64;
            for j in 0..n_theta {
                let th = std::f64::consts::FRAC_PI_2 * j as f64 / (n_theta - 1) as f64;
                nodes.push((r * th.cos(), r * th.sin()));
            }
        }
        Self::new(n_r, n_theta, nodes)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        self.nodes[i * self.n2 + j]
    }

    /// Reference lattice grids (`1..=n` per axis).
    pub fn reference_mesh(&self) -> TensorMesh {
        let gx = Grid1D::from_nodes((1..=self.n1).map(|i| i as f64).collect()).unwrap();
        let gy = Grid1D::from_nodes((1..=self.n2).map(|j| j as f64).collect()).unwrap();
        TensorMesh::d2(gx, gy)
    }

    fn check_orientation(&self) -> Result<()> {
        // det J is bilinear (affine in each natural coordinate) per
        // element, so positivity at the four corners implies positivity
        // throughout the element.
        for e1 in 0..self.n1 - 1 {
            for e2 in 0..self.n2 - 1 {
                for (xi, eta) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                    let j = self.jacobian_natural(e1, e2, xi, eta);
                    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    if det <= 0.0 {
                        return Err(Error::DegenerateElement {
                            i: e1,
                            j: e2,
                            det,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn corners(&self, e1: usize, e2: usize) -> [(f64, f64); 4] {
        [
            self.node(e1, e2),
            self.node(e1 + 1, e2),
            self.node(e1 + 1, e2 + 1),
            self.node(e1, e2 + 1),
        ]
    }

    fn element_of(&self, xt: f64, yt: f64) -> Result<(usize, usize, f64, f64)> {
        let (n1, n2) = (self.n1 as f64, self.n2 as f64);
        if !(1.0 <= xt && xt <= n1 && 1.0 <= yt && yt <= n2) {
            return Err(Error::PointOutsideReference { x: xt, y: yt });
        }
        let e1 = ((xt - 1.0).floor() as usize).min(self.n1 - 2);
        let e2 = ((yt - 1.0).floor() as usize).min(self.n2 - 2);
        // lattice spacing is 1, so ξ = 2(x̃ - x̃_1) - 1
        let xi = 2.0 * (xt - (e1 + 1) as f64) - 1.0;
        let eta = 2.0 * (yt - (e2 + 1) as f64) - 1.0;
        Ok((e1, e2, xi, eta))
    }

    /// Bilinear image of a reference point through its containing element.
    pub fn forward_map(&self, xt: f64, yt: f64) -> Result<(f64, f64)> {
        let (e1, e2, xi, eta) = self.element_of(xt, yt)?;
        let c = self.corners(e1, e2);
        let n = [
            0.25 * (1.0 - xi) * (1.0 - eta),
            0.25 * (1.0 + xi) * (1.0 - eta),
            0.25 * (1.0 + xi) * (1.0 + eta),
            0.25 * (1.0 - xi) * (1.0 + eta),
        ];
        let mut x = 0.0;
        let mut y = 0.0;
        for a in 0..4 {
            x += n[a] * c[a].0;
            y += n[a] * c[a].1;
        }
        Ok((x, y))
    }

    fn jacobian_natural(&self, e1: usize, e2: usize, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        let c = self.corners(e1, e2);
        let dn_dxi = [
            -0.25 * (1.0 - eta),
            0.25 * (1.0 - eta),
            0.25 * (1.0 + eta),
            -0.25 * (1.0 + eta),
        ];
        let dn_deta = [
            -0.25 * (1.0 - xi),
            -0.25 * (1.0 + xi),
            0.25 * (1.0 + xi),
            0.25 * (1.0 - xi),
        ];
        let mut j = [[0.0; 2]; 2];
        for a in 0..4 {
            j[0][0] += dn_dxi[a] * c[a].0;
            j[1][0] += dn_dxi[a] * c[a].1;
            j[0][1] += dn_deta[a] * c[a].0;
            j[1][1] += dn_deta[a] * c[a].1;
        }
        // ξ = 2(x̃ - x̃_1) - 1 on unit lattice spacing: dξ/dx̃ = 2
        for row in &mut j {
            row[0] *= 2.0;
            row[1] *= 2.0;
        }
        j
    }

    /// `J = ∂(x, y)/∂(x̃, ỹ)` at a reference point.
    pub fn jacobian(&self, xt: f64, yt: f64) -> Result<[[f64; 2]; 2]> {
        let (e1, e2, xi, eta) = self.element_of(xt, yt)?;
        let j = self.jacobian_natural(e1, e2, xi, eta);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det <= 0.0 {
            return Err(Error::DegenerateElement { i: e1, j: e2, det });
        }
        Ok(j)
    }

    /// Pointwise pulled-back metric `(g11, g12, g22, det J)`.
    ///
    /// With the reference gradient `∇̃u = J^T ∇u`, the physical Dirichlet
    /// integrand transforms as `|∇u|² det J = (∇̃u)^T J^{-1} J^{-T} ∇̃u det J`,
    /// so `G = J^{-1} J^{-T} det J` (for axis-aligned maps the transposed
    /// variant coincides).
    pub fn metric(&self, xt: f64, yt: f64) -> Result<(f64, f64, f64, f64)> {
        let j = self.jacobian(xt, yt)?;
        let (a, b, c, d) = (j[0][0], j[0][1], j[1][0], j[1][1]);
        let det = a * d - b * c;
        let g11 = (b * b + d * d) / det;
        let g12 = -(a * b + c * d) / det;
        let g22 = (a * a + c * c) / det;
        Ok((g11, g12, g22, det))
    }

    /// Plain-text serialization: header then one `i j x y` line per node,
    /// row-major, 1-based lattice indices, full decimal precision.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "mapped-domain v1 n={},{}", self.n1, self.n2)?;
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let (x, y) = self.node(i, j);
                writeln!(w, "{} {} {x} {y}", i + 1, j + 1)?;
            }
        }
        Ok(())
    }

    pub fn save_to_path(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mapped-domain file".into()))??;
        let mut words = header.split_whitespace();
        if words.next() != Some("mapped-domain") || words.next() != Some("v1") {
            return Err(Error::Parse("expected `mapped-domain v1` header".into()));
        }
        let nspec = words
            .next()
            .and_then(|w| w.strip_prefix("n="))
            .ok_or_else(|| Error::Parse("missing n=".into()))?;
        let dims: Vec<usize> = nspec
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Parse("bad n=".into())))
            .collect::<Result<Vec<_>>>()?;
        if dims.len() != 2 {
            return Err(Error::Parse("mapped domains are 2D".into()));
        }
        let (n1, n2) = (dims[0], dims[1]);
        let mut nodes = vec![(0.0, 0.0); n1 * n2];
        let mut seen = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::Parse(format!("expected `i j x y`, got `{line}`")));
            }
            let i: usize = parts[0]
                .parse()
                .map_err(|_| Error::Parse("bad index".into()))?;
            let j: usize = parts[1]
                .parse()
                .map_err(|_| Error::Parse("bad index".into()))?;
            let x: f64 = parts[2]
                .parse()
                .map_err(|_| Error::Parse("bad coordinate".into()))?;
            let y: f64 = parts[3]
                .parse()
                .map_err(|_| Error::Parse("bad coordinate".into()))?;
            if i < 1 || i > n1 || j < 1 || j > n2 {
                return Err(Error::Parse(format!("index ({i},{j}) out of range")));
            }
            nodes[(i - 1) * n2 + (j - 1)] = (x, y);
            seen += 1;
        }
        if seen != n1 * n2 {
            return Err(Error::Parse(format!(
                "expected {} node lines, got {seen}",
                n1 * n2
            )));
        }
        Self::new(n1, n2, nodes)
    }

    pub fn load_from_path(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::load(f)
    }
}

/// One separated factor pair sampled on the per-axis Gauss grids.
pub type MetricMode = (Vec<f64>, Vec<f64>);

/// SVD-separated pulled-back metric (and measure) on the Gauss sample grid.
pub struct SeparatedMetric {
    /// reference-coordinate Gauss points per axis (per element × order)
    pub gauss_x: Vec<f64>,
    pub gauss_y: Vec<f64>,
    /// reference quadrature weights per axis
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    pub g11: Vec<MetricMode>,
    pub g12: Vec<MetricMode>,
    pub g22: Vec<MetricMode>,
    pub det: Vec<MetricMode>,
    /// max abs reconstruction error over all samples and entries
    pub reconstruction_error: f64,
}

impl SeparatedMetric {
    pub fn max_modes(&self) -> usize {
        self.g11
            .len()
            .max(self.g12.len())
            .max(self.g22.len())
            .max(self.det.len())
    }
}

fn svd_separate(samples: &nalgebra::DMatrix<f64>, tol: f64) -> Vec<MetricMode> {
    let svd = crate::linalg::jacobi_svd(samples);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let mut modes = Vec::new();
    for (q, &sigma) in svd.sigma.iter().enumerate() {
        if !(sigma > tol * smax) || sigma == 0.0 {
            continue;
        }
        let phi: Vec<f64> = (0..samples.nrows())
            .map(|i| sigma * svd.u[(i, q)])
            .collect();
        let psi: Vec<f64> = (0..samples.ncols()).map(|j| svd.v[(j, q)]).collect();
        modes.push((phi, psi));
    }
    modes
}

fn reconstruct(modes: &[MetricMode], i: usize, j: usize) -> f64 {
    modes.iter().map(|(p, s)| p[i] * s[j]).sum()
}

/// Sample the metric on the tensor Gauss grid and separate each entry by
/// SVD, truncating at relative singular-value tolerance `tol`.
pub fn separate_metric(domain: &MappedDomain, g: usize, tol: f64) -> Result<SeparatedMetric> {
    let rule = QuadRule::gauss(g);
    let (n1, n2) = domain.shape();
    let mut gauss_x = Vec::with_capacity((n1 - 1) * g);
    let mut wx = Vec::with_capacity((n1 - 1) * g);
    for e in 0..n1 - 1 {
        let (p, w) = rule.mapped((e + 1) as f64, (e + 2) as f64);
        gauss_x.extend(p);
        wx.extend(w);
    }
    let mut gauss_y = Vec::with_capacity((n2 - 1) * g);
    let mut wy = Vec::with_capacity((n2 - 1) * g);
    for e in 0..n2 - 1 {
        let (p, w) = rule.mapped((e + 1) as f64, (e + 2) as f64);
        gauss_y.extend(p);
        wy.extend(w);
    }
    let (nx, ny) = (gauss_x.len(), gauss_y.len());
    let mut m11 = nalgebra::DMatrix::zeros(nx, ny);
    let mut m12 = nalgebra::DMatrix::zeros(nx, ny);
    let mut m22 = nalgebra::DMatrix::zeros(nx, ny);
    let mut mdd = nalgebra::DMatrix::zeros(nx, ny);
    for i in 0..nx {
        for j in 0..ny {
            let (g11, g12, g22, det) = domain.metric(gauss_x[i], gauss_y[j])?;
            m11[(i, j)] = g11;
            m12[(i, j)] = g12;
            m22[(i, j)] = g22;
            mdd[(i, j)] = det;
        }
    }
    let g11 = svd_separate(&m11, tol);
    let g12 = svd_separate(&m12, tol);
    let g22 = svd_separate(&m22, tol);
    let det = svd_separate(&mdd, tol);
    let mut err: f64 = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            err = err.max((reconstruct(&g11, i, j) - m11[(i, j)]).abs());
            err = err.max((reconstruct(&g12, i, j) - m12[(i, j)]).abs());
            err = err.max((reconstruct(&g22, i, j) - m22[(i, j)]).abs());
            err = err.max((reconstruct(&det, i, j) - mdd[(i, j)]).abs());
        }
    }
    Ok(SeparatedMetric {
        gauss_x,
        gauss_y,
        wx,
        wy,
        g11,
        g12,
        g22,
        det,
        reconstruction_error: err,
    })
}

/// Non-symmetric three-band matrix (`sub`, `diag`, `sup`): the shape of
/// `∫ w N'_I N_J` on a 1D grid.
#[derive(Debug, Clone)]
struct Band3 {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl Band3 {
    fn zeros(n: usize) -> Self {
        Self {
            sub: vec![0.0; n - 1],
            diag: vec![0.0; n],
            sup: vec![0.0; n - 1],
        }
    }

    fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.diag.len();
        let mut s = 0.0;
        for i in 0..n {
            s += x[i] * self.diag[i] * y[i];
            if i + 1 < n {
                s += x[i] * self.sup[i] * y[i + 1];
                s += x[i + 1] * self.sub[i] * y[i];
            }
        }
        s
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i + 1 < n {
                v += self.sup[i] * x[i + 1];
            }
            if i > 0 {
                v += self.sub[i - 1] * x[i - 1];
            }
            y[i] = v;
        }
        y
    }

    fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i + 1 < n {
                v += self.sub[i] * x[i + 1];
            }
            if i > 0 {
                v += self.sup[i - 1] * x[i - 1];
            }
            y[i] = v;
        }
        y
    }

    /// symmetric part as a TriDiag (for block systems)
    fn symmetrized(&self) -> TriDiag {
        TriDiag {
            diag: self.diag.clone(),
            off: self
                .sub
                .iter()
                .zip(&self.sup)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        }
    }
}

/// Weighted 1D operators for one reference axis, one per metric mode.
struct MappedAxis {
    n: usize,
    /// ∫ w N' N'  (per g11-mode on x, per g22-mode on y)
    stiff_like: Vec<TriDiag>,
    /// ∫ w N N    (per g22-mode on x, per g11-mode on y)
    mass_like: Vec<TriDiag>,
    /// ∫ w N' N   (per g12 mode)
    cross: Vec<Band3>,
    /// per (source term × det mode): ∫ w_det b N
    loads: Vec<Vec<f64>>,
}

/// Assembled mapped-PGD problem on the reference lattice.
pub struct MappedWorkspace {
    mesh: TensorMesh,
    x: MappedAxis,
    y: MappedAxis,
    pub metric: SeparatedMetric,
}

fn assemble_weighted_tridiag(
    n: usize,
    g: usize,
    rule: &QuadRule,
    weights: &[f64],
    samples: &[f64],
    stiffness: bool,
) -> TriDiag {
    let mut m = TriDiag::zeros(n);
    for e in 0..n - 1 {
        for gi in 0..g {
            let idx = e * g + gi;
            let w = weights[idx] * samples[idx];
            if stiffness {
                // unit lattice spacing: N' = ∓1
                m.diag[e] += w;
                m.diag[e + 1] += w;
                m.off[e] -= w;
            } else {
                let t = rule.points[gi];
                let n0 = 0.5 * (1.0 - t);
                let n1 = 0.5 * (1.0 + t);
                m.diag[e] += w * n0 * n0;
                m.diag[e + 1] += w * n1 * n1;
                m.off[e] += w * n0 * n1;
            }
        }
    }
    m
}

fn assemble_weighted_cross(
    n: usize,
    g: usize,
    rule: &QuadRule,
    weights: &[f64],
    samples: &[f64],
) -> Band3 {
    let mut m = Band3::zeros(n);
    for e in 0..n - 1 {
        for gi in 0..g {
            let idx = e * g + gi;
            let w = weights[idx] * samples[idx];
            let t = rule.points[gi];
            let n0 = 0.5 * (1.0 - t);
            let n1 = 0.5 * (1.0 + t);
            // rows: N'_I with N'_e = -1, N'_{e+1} = +1; cols: N_J
            m.diag[e] += w * (-1.0) * n0;
            m.sup[e] += w * (-1.0) * n1;
            m.sub[e] += w * (1.0) * n0;
            m.diag[e + 1] += w * (1.0) * n1;
        }
    }
    m
}

impl MappedWorkspace {
    /// Assemble the solver inputs: source must be given as separable terms
    /// in reference coordinates (point loads are not supported here).
    pub fn new(
        domain: &MappedDomain,
        source: &SourceTerm,
        g: usize,
        metric_tol: f64,
    ) -> Result<Self> {
        if source.dim() != 2 {
            return Err(Error::UnsupportedSource(
                "mapped solves are 2D (reference coordinates)".into(),
            ));
        }
        if !source.point_loads().is_empty() {
            return Err(Error::UnsupportedSource(
                "point loads are not supported on mapped domains; supply a \
                 separable source in reference coordinates"
                    .into(),
            ));
        }
        let metric = separate_metric(domain, g, metric_tol)?;
        let rule = QuadRule::gauss(g);
        let (n1, n2) = domain.shape();

        let stiff_x: Vec<TriDiag> = metric
            .g11
            .iter()
            .map(|(phi, _)| assemble_weighted_tridiag(n1, g, &rule, &metric.wx, phi, true))
            .collect();
        let mass_y_for_g11: Vec<TriDiag> = metric
            .g11
            .iter()
            .map(|(_, psi)| assemble_weighted_tridiag(n2, g, &rule, &metric.wy, psi, false))
            .collect();
        let mass_x_for_g22: Vec<TriDiag> = metric
            .g22
            .iter()
            .map(|(phi, _)| assemble_weighted_tridiag(n1, g, &rule, &metric.wx, phi, false))
            .collect();
        let stiff_y: Vec<TriDiag> = metric
            .g22
            .iter()
            .map(|(_, psi)| assemble_weighted_tridiag(n2, g, &rule, &metric.wy, psi, true))
            .collect();
        let cross_x: Vec<Band3> = metric
            .g12
            .iter()
            .map(|(phi, _)| assemble_weighted_cross(n1, g, &rule, &metric.wx, phi))
            .collect();
        let cross_y: Vec<Band3> = metric
            .g12
            .iter()
            .map(|(_, psi)| assemble_weighted_cross(n2, g, &rule, &metric.wy, psi))
            .collect();

        // loads: one vector per (separable term × det mode)
        let mut loads_x = Vec::new();
        let mut loads_y = Vec::new();
        for term in source.terms() {
            for (phi_d, psi_d) in &metric.det {
                let mut fx = vec![0.0; n1];
                for e in 0..n1 - 1 {
                    for gi in 0..g {
                        let idx = e * g + gi;
                        let w = metric.wx[idx] * phi_d[idx] * term.axes[0].eval(metric.gauss_x[idx]);
                        let t = rule.points[gi];
                        fx[e] += w * 0.5 * (1.0 - t);
                        fx[e + 1] += w * 0.5 * (1.0 + t);
                    }
                }
                loads_x.push(fx);
                let mut fy = vec![0.0; n2];
                for e in 0..n2 - 1 {
                    for gi in 0..g {
                        let idx = e * g + gi;
                        let w = metric.wy[idx] * psi_d[idx] * term.axes[1].eval(metric.gauss_y[idx]);
                        let t = rule.points[gi];
                        fy[e] += w * 0.5 * (1.0 - t);
                        fy[e + 1] += w * 0.5 * (1.0 + t);
                    }
                }
                loads_y.push(fy);
            }
        }

        // y-axis naming: `stiff_like` pairs with the x-axis stiffness
        // route (so it holds the ∫ψ11 N N factors), `mass_like` with the
        // x-axis mass route (∫ψ22 N' N')
        Ok(Self {
            mesh: domain.reference_mesh(),
            x: MappedAxis {
                n: n1,
                stiff_like: stiff_x,
                mass_like: mass_x_for_g22,
                cross: cross_x,
                loads: loads_x,
            },
            y: MappedAxis {
                n: n2,
                stiff_like: mass_y_for_g11,
                mass_like: stiff_y,
                cross: cross_y,
                loads: loads_y,
            },
            metric,
        })
    }

    /// a(u, v) for two rank-1 fields through the separated metric.
    fn cross_energy(&self, u: &Mode, v: &Mode) -> f64 {
        let (bu, gu) = (&u.factors[0], &u.factors[1]);
        let (bv, gv) = (&v.factors[0], &v.factors[1]);
        let mut s = 0.0;
        for (a, kx) in self.x.stiff_like.iter().enumerate() {
            s += kx.form(bu, bv) * self.y.stiff_like[a].form(gu, gv);
        }
        for (c, mx) in self.x.mass_like.iter().enumerate() {
            s += mx.form(bu, bv) * self.y.mass_like[c].form(gu, gv);
        }
        for (b, bx) in self.x.cross.iter().enumerate() {
            // y.cross holds ∫ψ12 N' N, the transpose of the pairing the
            // route needs, so the argument order flips
            let dy = &self.y.cross[b];
            // route X'_u X_v · Y_u Y'_v
            s += bx.form(bu, bv) * dy.form(gv, gu);
            // route X_u X'_v · Y'_u Y_v
            s += bx.form(bv, bu) * dy.form(gu, gv);
        }
        s
    }

    fn linear_of_mode(&self, m: &Mode) -> f64 {
        self.x
            .loads
            .iter()
            .zip(&self.y.loads)
            .map(|(fx, fy)| dot(fx, &m.factors[0]) * dot(fy, &m.factors[1]))
            .sum()
    }

    pub fn energy_of(&self, modes: &[Mode]) -> EnergyValue {
        let mut quad = 0.0;
        for p in modes {
            for q in modes {
                quad += self.cross_energy(p, q);
            }
        }
        let lin: f64 = modes.iter().map(|m| self.linear_of_mode(m)).sum();
        EnergyValue::new(0.5 * quad, lin)
    }

    /// Half-sweep system for one axis with the other frozen.
    fn axis_system(&self, mode: &Mode, previous: &[Mode], axis: usize) -> (TriDiag, Vec<f64>) {
        let (own, other, own_f, other_f) = if axis == 0 {
            (&self.x, &self.y, &mode.factors[0], &mode.factors[1])
        } else {
            (&self.y, &self.x, &mode.factors[1], &mode.factors[0])
        };
        let n = own.n;
        let mut h = TriDiag::zeros(n);
        for (a, ka) in own.stiff_like.iter().enumerate() {
            let c = other.stiff_like[a].form(other_f, other_f);
            h = h.add_scaled(c, ka);
        }
        for (c, mc) in own.mass_like.iter().enumerate() {
            let cc = other.mass_like[c].form(other_f, other_f);
            h = h.add_scaled(cc, mc);
        }
        for (b, bb) in own.cross.iter().enumerate() {
            let d = other.cross[b].form(other_f, other_f);
            // quadratic form sees B + B^T; both routes carry the same
            // frozen-factor scalar
            let sym = bb.symmetrized();
            h = h.add_scaled(2.0 * d, &sym);
        }
        let mut rhs = vec![0.0; n];
        for (fx, fy) in own.loads.iter().zip(&other.loads) {
            let c = dot(fy, other_f);
            axpy(&mut rhs, c, fx);
        }
        let _ = own_f;
        // coupling with previous modes
        for prev in previous {
            let (pf_own, pf_other) = if axis == 0 {
                (&prev.factors[0], &prev.factors[1])
            } else {
                (&prev.factors[1], &prev.factors[0])
            };
            for (a, ka) in own.stiff_like.iter().enumerate() {
                let c = other.stiff_like[a].form(pf_other, other_f);
                axpy(&mut rhs, -c, &ka.matvec(pf_own));
            }
            for (c, mc) in own.mass_like.iter().enumerate() {
                let cc = other.mass_like[c].form(pf_other, other_f);
                axpy(&mut rhs, -cc, &mc.matvec(pf_own));
            }
            for (b, bb) in own.cross.iter().enumerate() {
                let dmat = &other.cross[b];
                if axis == 0 {
                    // bb = B (∫φ12 N' N), dmat = y.cross = D^T
                    // route (β_r^T B β)(γ_r^T D γ): ∂/∂β = B^T β_r, scalar
                    // γ_r^T D γ = dmat.form(γ, γ_r)
                    let c1 = dmat.form(other_f, pf_other);
                    axpy(&mut rhs, -c1, &bb.t_matvec(pf_own));
                    // route (β_r^T B^T β)(γ_r^T D^T γ): ∂/∂β = B β_r
                    let c2 = dmat.form(pf_other, other_f);
                    axpy(&mut rhs, -c2, &bb.matvec(pf_own));
                } else {
                    // bb = y.cross = D^T, dmat = B
                    // route (β_r^T B β)(γ_r^T D γ): ∂/∂γ = D^T γ_r = bb γ_r
                    let c1 = dmat.form(pf_other, other_f);
                    axpy(&mut rhs, -c1, &bb.matvec(pf_own));
                    // route (β_r^T B^T β)(γ_r^T D^T γ): ∂/∂γ = D γ_r
                    let c2 = dmat.form(other_f, pf_other);
                    axpy(&mut rhs, -c2, &bb.t_matvec(pf_own));
                }
            }
        }
        (h, rhs)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// Outcome of a mapped PGD solve.
#[derive(Debug, Clone)]
pub struct MappedPgdOutcome {
    /// Separated solution over the reference lattice axes.
    pub solution: SeparatedSolution,
    pub converged: bool,
    pub stagnated: bool,
    pub energies: Vec<f64>,
    /// Metric separation residual, propagated as an error bar on Π.
    pub metric_error: f64,
}

/// Incremental PGD on a mapped domain with the SVD-separated metric.
pub fn solve_pgd_mapped(
    domain: &MappedDomain,
    source: &SourceTerm,
    q: usize,
) -> Result<MappedPgdOutcome> {
    solve_pgd_mapped_with(domain, source, q, DEFAULT_GAUSS_ORDER, 1e-10, 42)
}

pub fn solve_pgd_mapped_with(
    domain: &MappedDomain,
    source: &SourceTerm,
    q: usize,
    g: usize,
    metric_tol: f64,
    seed: u64,
) -> Result<MappedPgdOutcome> {
    if q < 1 {
        return Err(Error::InvalidRange("mode count must be >= 1".into()));
    }
    let ws = MappedWorkspace::new(domain, source, g, metric_tol)?;
    let mesh = ws.mesh.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes: Vec<Mode> = Vec::new();
    let mut energies = vec![0.0];
    let mut converged = true;
    let mut stagnated = false;
    for _ in 0..q {
        let mut mode = Mode {
            factors: mesh
                .axes()
                .iter()
                .map(|grid| crate::separated::random_unit_factor(grid, &mut rng))
                .collect(),
        };
        let mut mode_converged = false;
        let mut prev_mode = mode.clone();
        'sweeps: for _sweep in 0..200 {
            for axis in 0..2 {
                let (h, rhs) = ws.axis_system(&mode, &modes, axis);
                let n = h.len();
                let hmax = h
                    .diag
                    .iter()
                    .chain(h.off.iter())
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                if hmax == 0.0 {
                    // frozen factor vanished: the enrichment is zero
                    for f in &mut mode.factors {
                        f.iter_mut().for_each(|v| *v = 0.0);
                    }
                    mode_converged = true;
                    break 'sweeps;
                }
                let hi = h.slice(1, n - 1);
                let sol = hi.solve(&rhs[1..n - 1])?;
                mode.factors[axis][0] = 0.0;
                mode.factors[axis][n - 1] = 0.0;
                mode.factors[axis][1..n - 1].copy_from_slice(&sol);
                if sol.iter().all(|&v| v == 0.0) {
                    for f in &mut mode.factors {
                        f.iter_mut().for_each(|v| *v = 0.0);
                    }
                    mode_converged = true;
                    break 'sweeps;
                }
            }
            let delta = mode_delta(&prev_mode, &mode);
            prev_mode = mode.clone();
            if delta <= 1e-10 {
                mode_converged = true;
                break;
            }
        }
        let mut candidate = modes.clone();
        candidate.push(mode.clone());
        let e_new = ws.energy_of(&candidate).total;
        let e_prev = *energies.last().unwrap();
        if e_prev - e_new <= 1e-12 * e_prev.abs() {
            stagnated = true;
            break;
        }
        converged &= mode_converged;
        normalize_mode(&mut mode);
        modes.push(mode);
        energies.push(e_new);
    }
    Ok(MappedPgdOutcome {
        solution: SeparatedSolution::new(mesh, modes)?,
        converged,
        stagnated,
        energies,
        metric_error: ws.metric.reconstruction_error,
    })
}

fn mode_delta(a: &Mode, b: &Mode) -> f64 {
    let mut an = a.clone();
    let mut bn = b.clone();
    normalize_mode(&mut an);
    normalize_mode(&mut bn);
    let mut worst: f64 = 0.0;
    for (fa, fb) in an.factors.iter().zip(&bn.factors) {
        let num = fa
            .iter()
            .zip(fb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den = fa.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        worst = worst.max(num / den);
    }
    worst
}

/// Relative energy-norm error of a mapped solution against an analytic
/// physical-gradient field, integrated on the reference Gauss grid with
/// the exact pointwise metric.
pub fn energy_error_vs_exact_mapped(
    domain: &MappedDomain,
    solution: &SeparatedSolution,
    grad_exact: &dyn Fn(f64, f64) -> (f64, f64),
    g: usize,
) -> Result<f64> {
    let rule = QuadRule::gauss(g);
    let (n1, n2) = domain.shape();
    let mesh = solution.mesh();
    let gx = mesh.axis(0);
    let gy = mesh.axis(1);
    let mut err_sq = 0.0;
    let mut ref_sq = 0.0;
    for e1 in 0..n1 - 1 {
        let (px, wx) = rule.mapped((e1 + 1) as f64, (e1 + 2) as f64);
        for e2 in 0..n2 - 1 {
            let (py, wy) = rule.mapped((e2 + 1) as f64, (e2 + 2) as f64);
            for (xt, wxt) in px.iter().zip(&wx) {
                for (yt, wyt) in py.iter().zip(&wy) {
                    let w = wxt * wyt;
                    let jm = domain.jacobian(*xt, *yt)?;
                    let det = jm[0][0] * jm[1][1] - jm[0][1] * jm[1][0];
                    let (x, y) = domain.forward_map(*xt, *yt)?;
                    let (gx_ex, gy_ex) = grad_exact(x, y);
                    // reference gradient of the exact field: J^T ∇u
                    let ref_grad = [
                        jm[0][0] * gx_ex + jm[1][0] * gy_ex,
                        jm[0][1] * gx_ex + jm[1][1] * gy_ex,
                    ];
                    // reference gradient of the separated solution
                    let (ex, nx0, nx1) = gx.hat_pair(*xt);
                    let (ey, ny0, ny1) = gy.hat_pair(*yt);
                    let mut du = [0.0, 0.0];
                    for m in solution.modes() {
                        let bx = &m.factors[0];
                        let by = &m.factors[1];
                        let xv = nx0 * bx[ex] + nx1 * bx[ex + 1];
                        let dxv = bx[ex + 1] - bx[ex]; // unit lattice spacing
                        let yv = ny0 * by[ey] + ny1 * by[ey + 1];
                        let dyv = by[ey + 1] - by[ey];
                        du[0] += dxv * yv;
                        du[1] += xv * dyv;
                    }
                    let d = [du[0] - ref_grad[0], du[1] - ref_grad[1]];
                    let (g11, g12, g22, _) = domain.metric(*xt, *yt)?;
                    err_sq += w * (g11 * d[0] * d[0] + 2.0 * g12 * d[0] * d[1] + g22 * d[1] * d[1]);
                    ref_sq += w * det * (gx_ex * gx_ex + gy_ex * gy_ex);
                }
            }
        }
    }
    if ref_sq == 0.0 {
        return Err(Error::DegenerateData("exact field has zero energy".into()));
    }
    Ok((err_sq / ref_sq).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separated::{solve_pgd, Method};
    use crate::source::AxisFn;
    use ndarray::IxDyn;
    use std::f64::consts::PI;

    #[test]
    fn rectangle_maps_lattice_nodes_to_physical_nodes() {
        let d = MappedDomain::rectangle(5, 4, 2.0, 1.0).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let (x, y) = d.forward_map((i + 1) as f64, (j + 1) as f64).unwrap();
                let (xn, yn) = d.node(i, j);
                assert!((x - xn).abs() < 1e-14 && (y - yn).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quarter_ring_boundary_nodes_on_circles() {
        let d = MappedDomain::quarter_ring(6, 9, 1.0, 2.0).unwrap();
        for j in 0..9 {
            let (x, y) = d.forward_map(1.0, (j + 1) as f64).unwrap();
            assert!((x * x + y * y - 1.0).abs() < 1e-12);
            let (x, y) = d.forward_map(6.0, (j + 1) as f64).unwrap();
            assert!((x * x + y * y - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn element_midpoint_maps_to_corner_average() {
        let d = MappedDomain::quarter_ring(4, 4, 1.0, 3.0).unwrap();
        let (x, y) = d.forward_map(1.5, 2.5).unwrap();
        let c = [d.node(0, 1), d.node(1, 1), d.node(1, 2), d.node(0, 2)];
        let mx = c.iter().map(|p| p.0).sum::<f64>() / 4.0;
        let my = c.iter().map(|p| p.1).sum::<f64>() / 4.0;
        assert!((x - mx).abs() < 1e-14 && (y - my).abs() < 1e-14);
    }

    #[test]
    fn point_outside_reference_rejected() {
        let d = MappedDomain::rectangle(4, 4, 1.0, 1.0).unwrap();
        assert!(d.forward_map(0.5, 2.0).is_err());
        assert!(d.forward_map(2.0, 4.5).is_err());
    }

    #[test]
    fn jacobian_diagonal_for_uniform_rectangle() {
        let d = MappedDomain::rectangle(5, 3, 2.0, 1.0).unwrap();
        let j = d.jacobian(2.3, 1.7).unwrap();
        // element size over unit lattice spacing
        assert!((j[0][0] - 0.5).abs() < 1e-14);
        assert!((j[1][1] - 0.5).abs() < 1e-14);
        assert!(j[0][1].abs() < 1e-14 && j[1][0].abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let d = MappedDomain::quarter_ring(5, 7, 1.0, 2.0).unwrap();
        let (xt, yt) = (2.37, 4.81);
        let j = d.jacobian(xt, yt).unwrap();
        let step = 1e-7;
        let (xp, yp) = d.forward_map(xt + step, yt).unwrap();
        let (xm, ym) = d.forward_map(xt - step, yt).unwrap();
        assert!((j[0][0] - (xp - xm) / (2.0 * step)).abs() < 1e-7);
        assert!((j[1][0] - (yp - ym) / (2.0 * step)).abs() < 1e-7);
        let (xp, yp) = d.forward_map(xt, yt + step).unwrap();
        let (xm, ym) = d.forward_map(xt, yt - step).unwrap();
        assert!((j[0][1] - (xp - xm) / (2.0 * step)).abs() < 1e-7);
        assert!((j[1][1] - (yp - ym) / (2.0 * step)).abs() < 1e-7);
    }

    #[test]
    fn sheared_parallelogram_has_constant_shear_jacobian() {
        // x = x̃ + 0.3 ỹ, y = ỹ (scaled to unit elements)
        let mut nodes = Vec::new();
        for i in 0..4 {
            for j in 0..3 {
                nodes.push((i as f64 + 0.3 * j as f64, j as f64));
            }
        }
        let d = MappedDomain::new(4, 3, nodes).unwrap();
        for (xt, yt) in [(1.2, 1.7), (2.5, 2.1), (3.9, 1.1)] {
            let j = d.jacobian(xt, yt).unwrap();
            assert!((j[0][0] - 1.0).abs() < 1e-14);
            assert!((j[0][1] - 0.3).abs() < 1e-14);
            assert!(j[1][0].abs() < 1e-14);
            assert!((j[1][1] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        // bow-tie: two corners swapped
        let nodes = vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)];
        // n1=2, n2=2 row-major: (0,0)=(0,0), (0,1)=(0,1), (1,0)=(1,1), (1,1)=(1,0)
        assert!(matches!(
            MappedDomain::new(2, 2, nodes),
            Err(Error::DegenerateElement { .. })
        ));
    }

    #[test]
    fn metric_rectangle_is_single_constant_mode() {
        let d = MappedDomain::rectangle(5, 4, 2.0, 1.5).unwrap();
        let m = separate_metric(&d, 4, 1e-10).unwrap();
        assert_eq!(m.g11.len(), 1);
        assert_eq!(m.g22.len(), 1);
        assert_eq!(m.det.len(), 1);
        assert!(m.g12.is_empty(), "rectangle has no shear metric");
        assert!(m.reconstruction_error < 1e-12, "{}", m.reconstruction_error);
        // hx = 2/4, hy = 1.5/3: g11 = hy/hx = 1, det = hx hy = 0.25
        let g11 = m.g11[0].0[0] * m.g11[0].1[0];
        let det = m.det[0].0[0] * m.det[0].1[0];
        assert!((g11 - 1.0).abs() < 1e-12);
        assert!((det - 0.25).abs() < 1e-12);
    }

    #[test]
    fn metric_quarter_ring_low_rank_and_accurate() {
        let d = MappedDomain::quarter_ring(21, 21, 1.0, 2.0).unwrap();
        let m = separate_metric(&d, 4, 1e-10).unwrap();
        assert!(m.max_modes() <= 8, "rank {}", m.max_modes());
        // reconstruction against the pointwise metric at all samples
        for (i, &xt) in m.gauss_x.iter().enumerate() {
            for (j, &yt) in m.gauss_y.iter().enumerate() {
                let (g11, g12, g22, det) = d.metric(xt, yt).unwrap();
                let scale = g11.abs().max(g22.abs()).max(det.abs());
                assert!((reconstruct(&m.g11, i, j) - g11).abs() <= 1e-9 * scale);
                assert!((reconstruct(&m.g12, i, j) - g12).abs() <= 1e-9 * scale);
                assert!((reconstruct(&m.g22, i, j) - g22).abs() <= 1e-9 * scale);
                assert!((reconstruct(&m.det, i, j) - det).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn mapped_pgd_on_rectangle_equals_plain_pgd() {
        // unit square so the lattice-vs-physical factors line up with the
        // plain solver on [0,1]^2
        let (n1, n2) = (9usize, 8usize);
        let d = MappedDomain::rectangle(n1, n2, 1.0, 1.0).unwrap();
        // b(x, y) = sin(pi x) sin(pi y), expressed in lattice coordinates
        let sx = (n1 - 1) as f64;
        let sy = (n2 - 1) as f64;
        let src_ref = SourceTerm::new(2)
            .with_term(vec![
                AxisFn::new(
                    move |xt| (PI * (xt - 1.0) / sx).sin(),
                    move |xt| PI / sx * (PI * (xt - 1.0) / sx).cos(),
                ),
                AxisFn::new(
                    move |yt| (PI * (yt - 1.0) / sy).sin(),
                    move |yt| PI / sy * (PI * (yt - 1.0) / sy).cos(),
                ),
            ])
            .unwrap();
        let mapped = solve_pgd_mapped(&d, &src_ref, 3).unwrap();

        let mesh = TensorMesh::unit_uniform(&[n1, n2]).unwrap();
        let src = SourceTerm::new(2)
            .with_term(vec![AxisFn::sine(1.0, PI), AxisFn::sine(1.0, PI)])
            .unwrap();
        let plain = solve_pgd(&mesh, &src, 3).unwrap();

        assert_eq!(mapped.solution.q(), plain.solution.q());
        let um = mapped.solution.expand_to_nodal();
        let up = plain.solution.expand_to_nodal();
        let mut diff2 = 0.0;
        let solver = crate::fem::FemSolver::new(&mesh).unwrap();
        let mut dvals = up.values().clone();
        for (dv, (a, b)) in dvals
            .iter_mut()
            .zip(um.values().iter().zip(up.values().iter()))
        {
            *dv = a - b;
        }
        diff2 += solver.seminorm_sq(&dvals);
        let norm = solver.seminorm_sq(up.values());
        assert!(
            diff2.sqrt() <= 1e-10 * norm.sqrt().max(1.0),
            "energy-norm difference {}",
            diff2.sqrt()
        );
    }

    #[test]
    fn mapped_pgd_zero_source_returns_zero() {
        let d = MappedDomain::quarter_ring(6, 6, 1.0, 2.0).unwrap();
        let src = SourceTerm::new(2)
            .with_term(vec![AxisFn::constant(0.0), AxisFn::constant(0.0)])
            .unwrap();
        let out = solve_pgd_mapped(&d, &src, 3).unwrap();
        assert!(out.stagnated);
        assert_eq!(out.solution.q(), 0);
    }

    fn ring_fixture(n: usize) -> (MappedDomain, SourceTerm) {
        let (r0, r1) = (1.0f64, 2.0f64);
        let d = MappedDomain::quarter_ring(n, n, r0, r1).unwrap();
        let s = PI / (r1 - r0);
        let nr = (n - 1) as f64;
        let nth = (n - 1) as f64;
        // reference axis 0 is radial, axis 1 angular
        let radial = AxisFn::new(
            move |xt| {
                let r = r0 + (r1 - r0) * (xt - 1.0) / nr;
                s * s * (s * (r - r0)).sin() - s / r * (s * (r - r0)).cos()
                    + 4.0 / (r * r) * (s * (r - r0)).sin()
            },
            move |_| 0.0,
        );
        let angular = AxisFn::new(
            move |yt| {
                let th = std::f64::consts::FRAC_PI_2 * (yt - 1.0) / nth;
                (2.0 * th).sin()
            },
            move |_| 0.0,
        );
        let src = SourceTerm::new(2)
            .with_term(vec![radial, angular])
            .unwrap();
        (d, src)
    }

    fn ring_exact_grad(x: f64, y: f64) -> (f64, f64) {
        let (r0, r1) = (1.0f64, 2.0f64);
        let s = PI / (r1 - r0);
        let r = (x * x + y * y).sqrt();
        let th = y.atan2(x);
        let du_dr = s * (s * (r - r0)).cos() * (2.0 * th).sin();
        let du_dth = 2.0 * (s * (r - r0)).sin() * (2.0 * th).cos();
        let (ct, st) = (th.cos(), th.sin());
        (du_dr * ct - du_dth / r * st, du_dr * st + du_dth / r * ct)
    }

    #[test]
    fn quarter_ring_manufactured_solution_converges() {
        let mut errs = Vec::new();
        for n in [9usize, 17] {
            let (d, src) = ring_fixture(n);
            let out = solve_pgd_mapped(&d, &src, 6).unwrap();
            let e =
                energy_error_vs_exact_mapped(&d, &out.solution, &ring_exact_grad, 4).unwrap();
            errs.push(e);
        }
        let ratio = errs[0] / errs[1];
        assert!(
            ratio > 1.7 && ratio < 2.3,
            "expected ~2x error drop per refinement, got {errs:?}"
        );
    }

    #[test]
    fn mapped_file_roundtrip_exact() {
        let d = MappedDomain::quarter_ring(5, 6, 1.0, 2.5).unwrap();
        let mut buf = Vec::new();
        d.save(&mut buf).unwrap();
        let loaded = MappedDomain::load(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(d, loaded);
    }

    #[test]
    fn dof_count_for_mapped_matches_pgd() {
        let d = MappedDomain::rectangle(9, 9, 1.0, 1.0).unwrap();
        let mesh = d.reference_mesh();
        assert_eq!(
            crate::separated::dof_count(Method::PgdMapped, &mesh, 3),
            crate::separated::dof_count(Method::Pgd, &mesh, 3)
        );
    }

    #[test]
    fn mapped_energy_matches_physical_quadrature() {
        // internal consistency: Π from the separated metric equals the
        // direct physical-space quadrature of the same field
        let (d, src) = ring_fixture(7);
        let out = solve_pgd_mapped(&d, &src, 2).unwrap();
        let ws = MappedWorkspace::new(&d, &src, 4, 1e-12).unwrap();
        let e_sep = ws.energy_of(out.solution.modes()).total;

        // direct quadrature of (1/2)|∇u|² - u b over the physical domain
        let rule = QuadRule::gauss(4);
        let (n1, n2) = d.shape();
        let mesh = out.solution.mesh();
        let (gx, gy) = (mesh.axis(0), mesh.axis(1));
        let mut quad = 0.0;
        let mut lin = 0.0;
        for e1 in 0..n1 - 1 {
            let (px, wx) = rule.mapped((e1 + 1) as f64, (e1 + 2) as f64);
            for e2 in 0..n2 - 1 {
                let (py, wy) = rule.mapped((e2 + 1) as f64, (e2 + 2) as f64);
                for (xt, wxt) in px.iter().zip(&wx) {
                    for (yt, wyt) in py.iter().zip(&wy) {
                        let w = wxt * wyt;
                        let (g11, g12, g22, det) = d.metric(*xt, *yt).unwrap();
                        let (ex, nx0, nx1) = gx.hat_pair(*xt);
                        let (ey, ny0, ny1) = gy.hat_pair(*yt);
                        let mut du = [0.0, 0.0];
                        let mut uv = 0.0;
                        for m in out.solution.modes() {
                            let bx = &m.factors[0];
                            let by = &m.factors[1];
                            let xv = nx0 * bx[ex] + nx1 * bx[ex + 1];
                            let dxv = bx[ex + 1] - bx[ex];
                            let yv = ny0 * by[ey] + ny1 * by[ey + 1];
                            let dyv = by[ey + 1] - by[ey];
                            du[0] += dxv * yv;
                            du[1] += xv * dyv;
                            uv += xv * yv;
                        }
                        quad += 0.5
                            * w
                            * (g11 * du[0] * du[0]
                                + 2.0 * g12 * du[0] * du[1]
                                + g22 * du[1] * du[1]);
                        let b = src.eval_smooth(&[*xt, *yt]);
                        lin += w * det * b * uv;
                    }
                }
            }
        }
        let e_direct = quad - lin;
        assert!(
            (e_sep - e_direct).abs() <= 1e-9 * e_direct.abs().max(1.0),
            "separated {e_sep} vs direct {e_direct}"
        );
    }

    #[test]
    fn expanded_mapped_solution_is_finite_everywhere() {
        let (d, src) = ring_fixture(7);
        let out = solve_pgd_mapped(&d, &src, 2).unwrap();
        let nodal = out.solution.expand_to_nodal();
        assert!(nodal.values().iter().all(|v| v.is_finite()));
        assert!(nodal.values()[IxDyn(&[3, 3])].abs() > 0.0);
    }
}
