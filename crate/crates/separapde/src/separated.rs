//! Separated (canonical-decomposition) representations and the two
//! fixed-mesh reduced solvers.
//!
//! A solution is a sum of `Q` rank-1 modes, each the product of per-axis
//! piecewise-linear functions sharing one tensor mesh. Two solution schemes
//! are provided:
//!
//! - [`solve_cd`] optimizes all modes jointly by block coordinate descent:
//!   each sweep solves, per axis, one dense SPD system coupling every mode.
//! - [`solve_pgd`] builds modes greedily, one enrichment at a time, each
//!   solved to stagnation by the alternating-direction fixed point with
//!   tridiagonal systems per half-sweep.
//!
//! Since every mode expands to an ordinary nodal field, the joint scheme can
//! never beat the full FEM minimizer and the greedy scheme can never beat
//! the joint one; both facts are exercised in the tests.

use std::io::{BufRead, Write};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assembly::{self, QuadRule, TriDiag, DEFAULT_GAUSS_ORDER};
use crate::error::{Error, Result};
use crate::fem::{add_outer_product, EnergyValue, NodalField};
use crate::mesh::{Grid1D, TensorMesh};
use crate::optimizer::OptimizerConfig;
use crate::source::SourceTerm;

/// One rank-1 mode: a coefficient vector per axis (full grid length,
/// homogeneous boundary entries zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub factors: Vec<Vec<f64>>,
}

impl Mode {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            factors: shape.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// `Q` modes of per-axis coefficient vectors over a shared tensor mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedSolution {
    mesh: TensorMesh,
    modes: Vec<Mode>,
}

impl SeparatedSolution {
    pub fn new(mesh: TensorMesh, modes: Vec<Mode>) -> Result<Self> {
        let shape = mesh.shape();
        for (q, m) in modes.iter().enumerate() {
            if m.factors.len() != mesh.dim() {
                return Err(Error::IncompatibleMesh(format!(
                    "mode {q} has {} factors on a {}-D mesh",
                    m.factors.len(),
                    mesh.dim()
                )));
            }
            for (a, f) in m.factors.iter().enumerate() {
                if f.len() != shape[a] {
                    return Err(Error::IncompatibleMesh(format!(
                        "mode {q}, axis {a}: factor length {} vs {} nodes",
                        f.len(),
                        shape[a]
                    )));
                }
            }
        }
        Ok(Self { mesh, modes })
    }

    pub fn empty(mesh: TensorMesh) -> Self {
        Self {
            mesh,
            modes: Vec::new(),
        }
    }

    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn modes_mut(&mut self) -> &mut Vec<Mode> {
        &mut self.modes
    }

    pub fn q(&self) -> usize {
        self.modes.len()
    }

    /// Point evaluation `Σ_q Π_ax (Σ_I N_I(x_ax) f_ax[I])`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let dim = self.mesh.dim();
        assert_eq!(x.len(), dim);
        let pairs: Vec<(usize, f64, f64)> = (0..dim)
            .map(|a| self.mesh.axis(a).hat_pair(x[a]))
            .collect();
        self.modes
            .iter()
            .map(|m| {
                (0..dim)
                    .map(|a| {
                        let (e, n0, n1) = pairs[a];
                        n0 * m.factors[a][e] + n1 * m.factors[a][e + 1]
                    })
                    .product::<f64>()
            })
            .sum()
    }

    /// Expand to the full nodal tensor `u_(I,J[,K]) = Σ_q Π_ax f_ax[·]`.
    pub fn expand_to_nodal(&self) -> NodalField {
        let shape = self.mesh.shape();
        let mut t = ArrayD::zeros(IxDyn(&shape));
        for m in &self.modes {
            let refs: Vec<&[f64]> = m.factors.iter().map(|f| f.as_slice()).collect();
            add_outer_product(&mut t, &refs, 1.0);
        }
        NodalField::new(self.mesh.clone(), t).expect("shape by construction")
    }

    /// Energy potential via the factored 1D integrals.
    pub fn energy(&self, source: &SourceTerm) -> Result<EnergyValue> {
        let ws = SeparatedWorkspace::new(&self.mesh, source, DEFAULT_GAUSS_ORDER)?;
        Ok(ws.energy_of(&self.modes))
    }

    /// Serialize in the plain-text mode format. With `include_grids` the
    /// per-axis node coordinates are written as `nodes=` lines (required
    /// for solutions whose grids were adapted).
    pub fn save<W: Write>(&self, w: &mut W, include_grids: bool) -> Result<()> {
        let shape = self.mesh.shape();
        let n_str: Vec<String> = shape.iter().map(|n| n.to_string()).collect();
        writeln!(
            w,
            "pgd-modes v1 dims={} Q={} n={}",
            self.mesh.dim(),
            self.q(),
            n_str.join(",")
        )?;
        if include_grids {
            for grid in self.mesh.axes() {
                let line: Vec<String> = grid.nodes().iter().map(|v| format!("{v}")).collect();
                writeln!(w, "nodes={}", line.join(" "))?;
            }
        }
        for m in &self.modes {
            for f in &m.factors {
                let line: Vec<String> = f.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn save_to_path(&self, path: &std::path::Path, include_grids: bool) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f, include_grids)
    }

    /// Parse the plain-text format. Files without `nodes=` lines need the
    /// grids supplied by the caller.
    pub fn load<R: BufRead>(r: R, grids: Option<Vec<Grid1D>>) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mode file".into()))??;
        let mut dims = None;
        let mut q = None;
        let mut n: Option<Vec<usize>> = None;
        let mut words = header.split_whitespace();
        if words.next() != Some("pgd-modes") || words.next() != Some("v1") {
            return Err(Error::Parse("expected `pgd-modes v1` header".into()));
        }
        for w in words {
            if let Some(v) = w.strip_prefix("dims=") {
                dims = Some(v.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?);
            } else if let Some(v) = w.strip_prefix("Q=") {
                q = Some(v.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?);
            } else if let Some(v) = w.strip_prefix("n=") {
                n = Some(
                    v.split(',')
                        .map(|s| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
        }
        let dims = dims.ok_or_else(|| Error::Parse("missing dims=".into()))?;
        let q = q.ok_or_else(|| Error::Parse("missing Q=".into()))?;
        let n = n.ok_or_else(|| Error::Parse("missing n=".into()))?;
        if n.len() != dims {
            return Err(Error::Parse("n= arity does not match dims=".into()));
        }
        let mut rest: Vec<String> = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                rest.push(line);
            }
        }
        let parse_floats = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect()
        };
        let mut cursor = 0usize;
        let file_grids = if rest.first().is_some_and(|l| l.starts_with("nodes=")) {
            let mut gs = Vec::with_capacity(dims);
            for a in 0..dims {
                let line = rest
                    .get(cursor)
                    .ok_or_else(|| Error::Parse("missing nodes= line".into()))?;
                let coords = parse_floats(line.strip_prefix("nodes=").ok_or_else(|| {
                    Error::Parse(format!("expected nodes= line for axis {a}"))
                })?)?;
                gs.push(Grid1D::from_nodes(coords)?);
                cursor += 1;
            }
            Some(gs)
        } else {
            None
        };
        let grids = file_grids.or(grids).ok_or_else(|| {
            Error::Parse("file carries no nodes= lines and no grids were supplied".into())
        })?;
        let mesh = TensorMesh::new(grids)?;
        if mesh.shape() != n {
            return Err(Error::IncompatibleMesh(format!(
                "grids have shape {:?} but header says {:?}",
                mesh.shape(),
                n
            )));
        }
        let mut modes = Vec::with_capacity(q);
        for _ in 0..q {
            let mut factors = Vec::with_capacity(dims);
            for a in 0..dims {
                let line = rest
                    .get(cursor)
                    .ok_or_else(|| Error::Parse("missing coefficient line".into()))?;
                cursor += 1;
                let coeffs = parse_floats(line)?;
                if coeffs.len() != n[a] {
                    return Err(Error::Parse(format!(
                        "axis {a} expects {} coefficients, got {}",
                        n[a],
                        coeffs.len()
                    )));
                }
                factors.push(coeffs);
            }
            modes.push(Mode { factors });
        }
        SeparatedSolution::new(mesh, modes)
    }

    pub fn load_from_path(path: &std::path::Path, grids: Option<Vec<Grid1D>>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::load(f, grids)
    }
}

/// Equalize factor norms within a mode (rank-1 value unchanged) and fix the
/// sign so the largest-magnitude entry of the first-axis factor is positive.
pub fn normalize_mode(mode: &mut Mode) {
    let norms: Vec<f64> = mode
        .factors
        .iter()
        .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&n| n == 0.0) {
        for f in &mut mode.factors {
            f.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let dim = mode.factors.len();
    let target = norms.iter().product::<f64>().powf(1.0 / dim as f64);
    for (f, &n) in mode.factors.iter_mut().zip(&norms) {
        let s = target / n;
        f.iter_mut().for_each(|v| *v *= s);
    }
    let lead = &mode.factors[0];
    let mut arg = 0;
    for (i, v) in lead.iter().enumerate() {
        if v.abs() > lead[arg].abs() {
            arg = i;
        }
    }
    if lead[arg] < 0.0 {
        for v in &mut mode.factors[0] {
            *v = -*v;
        }
        for v in &mut mode.factors[1] {
            *v = -*v;
        }
    }
}

/// Per-axis assembled quantities for one (mesh, source) pair.
struct AxisSystem {
    k: TriDiag,
    m: TriDiag,
    k_int: TriDiag,
    m_int: TriDiag,
    /// per separable source term: full-length load vector
    loads: Vec<Vec<f64>>,
}

/// Point load paired with per-axis hat values at its location.
struct PointLoadAxes {
    hat: Vec<Vec<f64>>,
    magnitude: f64,
}

/// Assembled 1D factors shared by the separated solvers on one mesh.
pub struct SeparatedWorkspace {
    mesh: TensorMesh,
    axes: Vec<AxisSystem>,
    point_loads: Vec<PointLoadAxes>,
}

/// Stopping parameters for one alternating-direction enrichment.
#[derive(Debug, Clone, Copy)]
pub struct AdConfig {
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for AdConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 200,
            tol: 1e-10,
        }
    }
}

/// Diagnostics of one alternating-direction run.
#[derive(Debug, Clone)]
pub struct AdOutcome {
    pub sweeps: usize,
    pub converged: bool,
    pub reinitialized: bool,
    /// Π of (previous modes + current mode) after every half-sweep.
    pub energy_trace: Vec<f64>,
}

impl SeparatedWorkspace {
    pub fn new(mesh: &TensorMesh, source: &SourceTerm, gauss_order: usize) -> Result<Self> {
        if source.dim() != mesh.dim() {
            return Err(Error::UnsupportedSource(format!(
                "{}-D source on {}-D mesh",
                source.dim(),
                mesh.dim()
            )));
        }
        let rule = QuadRule::gauss(gauss_order);
        let mut axes = Vec::with_capacity(mesh.dim());
        for (a, grid) in mesh.axes().iter().enumerate() {
            let k = assembly::stiffness_1d(grid);
            let m = assembly::mass_1d(grid);
            let n = grid.len();
            let loads = source
                .terms()
                .iter()
                .map(|t| assembly::load_axis(grid, &t.axes[a], &rule))
                .collect();
            axes.push(AxisSystem {
                k_int: k.slice(1, n - 1),
                m_int: m.slice(1, n - 1),
                k,
                m,
                loads,
            });
        }
        let mut point_loads = Vec::new();
        for pl in source.point_loads() {
            let hat = mesh
                .axes()
                .iter()
                .enumerate()
                .map(|(a, grid)| {
                    let (e, n0, n1) = grid.hat_pair(pl.position[a]);
                    let mut v = vec![0.0; grid.len()];
                    v[e] = n0;
                    v[e + 1] = n1;
                    v
                })
                .collect();
            point_loads.push(PointLoadAxes {
                hat,
                magnitude: pl.magnitude,
            });
        }
        Ok(Self {
            mesh: mesh.clone(),
            axes,
            point_loads,
        })
    }

    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn stiffness(&self, axis: usize) -> &TriDiag {
        &self.axes[axis].k
    }

    pub fn mass(&self, axis: usize) -> &TriDiag {
        &self.axes[axis].m
    }

    /// (b, mode) for one rank-1 mode.
    fn linear_of_mode(&self, mode: &Mode) -> f64 {
        let mut lin = 0.0;
        for s in 0..self.axes[0].loads.len() {
            lin += (0..self.dim())
                .map(|a| dot(&self.axes[a].loads[s], &mode.factors[a]))
                .product::<f64>();
        }
        for pl in &self.point_loads {
            lin += pl.magnitude
                * (0..self.dim())
                    .map(|a| dot(&pl.hat[a], &mode.factors[a]))
                    .product::<f64>();
        }
        lin
    }

    /// Energy potential of a mode list through the 1D Gram factors.
    pub fn energy_of(&self, modes: &[Mode]) -> EnergyValue {
        let qn = modes.len();
        let dim = self.dim();
        let mut s_gram = vec![vec![vec![0.0; qn]; qn]; dim];
        let mut t_gram = vec![vec![vec![0.0; qn]; qn]; dim];
        for a in 0..dim {
            for p in 0..qn {
                for q in p..qn {
                    let s = self.axes[a]
                        .k
                        .form(&modes[p].factors[a], &modes[q].factors[a]);
                    let t = self.axes[a]
                        .m
                        .form(&modes[p].factors[a], &modes[q].factors[a]);
                    s_gram[a][p][q] = s;
                    s_gram[a][q][p] = s;
                    t_gram[a][p][q] = t;
                    t_gram[a][q][p] = t;
                }
            }
        }
        let mut quad = 0.0;
        for p in 0..qn {
            for q in 0..qn {
                for d in 0..dim {
                    let mut term = 1.0;
                    for a in 0..dim {
                        term *= if a == d {
                            s_gram[a][p][q]
                        } else {
                            t_gram[a][p][q]
                        };
                    }
                    quad += term;
                }
            }
        }
        quad *= 0.5;
        let lin: f64 = modes.iter().map(|m| self.linear_of_mode(m)).sum();
        EnergyValue::new(quad, lin)
    }

    /// Load part of the gradient w.r.t. the axis-`a` factor of `mode`:
    /// `Σ_s load_a^s Π_{ax≠a} (f_ax·load_ax^s)` plus point-load pairings.
    fn load_linear_form(&self, mode: &Mode, a: usize) -> Vec<f64> {
        let n = self.mesh.axis(a).len();
        let mut rhs = vec![0.0; n];
        for s in 0..self.axes[0].loads.len() {
            let mut c = 1.0;
            for ax in 0..self.dim() {
                if ax != a {
                    c *= dot(&self.axes[ax].loads[s], &mode.factors[ax]);
                }
            }
            axpy(&mut rhs, c, &self.axes[a].loads[s]);
        }
        for pl in &self.point_loads {
            let mut c = pl.magnitude;
            for ax in 0..self.dim() {
                if ax != a {
                    c *= dot(&pl.hat[ax], &mode.factors[ax]);
                }
            }
            axpy(&mut rhs, c, &pl.hat[a]);
        }
        rhs
    }

    /// Coupling of `mode`'s axis-`a` factor with the previous modes:
    /// the linear form `β ↦ a(u_prev, Δu)` as a full-length vector.
    fn coupling_linear_form(&self, previous: &[Mode], mode: &Mode, a: usize) -> Vec<f64> {
        let n = self.mesh.axis(a).len();
        let dim = self.dim();
        let mut out = vec![0.0; n];
        for prev in previous {
            let mut c = 1.0;
            for ax in 0..dim {
                if ax != a {
                    c *= self.axes[ax].m.form(&prev.factors[ax], &mode.factors[ax]);
                }
            }
            axpy(&mut out, c, &self.axes[a].k.matvec(&prev.factors[a]));
            for d in 0..dim {
                if d == a {
                    continue;
                }
                let mut c = self.axes[d].k.form(&prev.factors[d], &mode.factors[d]);
                for ax in 0..dim {
                    if ax != a && ax != d {
                        c *= self.axes[ax].m.form(&prev.factors[ax], &mode.factors[ax]);
                    }
                }
                axpy(&mut out, c, &self.axes[a].m.matvec(&prev.factors[a]));
            }
        }
        out
    }

    /// One enrichment: fixed-point loop solving the tridiagonal system for
    /// each axis factor with the others frozen, until the (balanced) mode
    /// stops changing.
    pub fn alternating_direction(
        &self,
        previous: &[Mode],
        mode: &mut Mode,
        cfg: &AdConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<AdOutcome> {
        let dim = self.dim();
        let mut reinitialized = false;
        let mut energy_trace = Vec::new();
        let mut converged = false;
        let mut sweeps = 0;
        let mut prev_snapshot = balanced_snapshot(mode);
        let mut all_modes: Vec<Mode> = Vec::with_capacity(previous.len() + 1);
        'outer: for sweep in 0..cfg.max_sweeps {
            sweeps = sweep + 1;
            for a in 0..dim {
                let (ck, cm) = loop {
                    let t_self: Vec<f64> = (0..dim)
                        .map(|ax| self.axes[ax].m.form(&mode.factors[ax], &mode.factors[ax]))
                        .collect();
                    let s_self: Vec<f64> = (0..dim)
                        .map(|ax| self.axes[ax].k.form(&mode.factors[ax], &mode.factors[ax]))
                        .collect();
                    let ck: f64 = (0..dim)
                        .filter(|&ax| ax != a)
                        .map(|ax| t_self[ax])
                        .product();
                    if ck > 1e-300 {
                        let mut cm = 0.0;
                        for d in 0..dim {
                            if d == a {
                                continue;
                            }
                            let mut c = s_self[d];
                            for ax in 0..dim {
                                if ax != a && ax != d {
                                    c *= t_self[ax];
                                }
                            }
                            cm += c;
                        }
                        break (ck, cm);
                    }
                    if reinitialized {
                        return Err(Error::SingularDirection);
                    }
                    for ax in 0..dim {
                        if ax != a {
                            mode.factors[ax] = random_unit_factor(self.mesh.axis(ax), rng);
                        }
                    }
                    reinitialized = true;
                };
                let h = self.axes[a]
                    .k_int
                    .scale(ck)
                    .add_scaled(1.0, &self.axes[a].m_int.scale(cm));
                let mut rhs = self.load_linear_form(mode, a);
                let coup = self.coupling_linear_form(previous, mode, a);
                for (r, c) in rhs.iter_mut().zip(&coup) {
                    *r -= c;
                }
                let n = self.mesh.axis(a).len();
                let sol = h.solve(&rhs[1..n - 1])?;
                mode.factors[a][0] = 0.0;
                mode.factors[a][n - 1] = 0.0;
                mode.factors[a][1..n - 1].copy_from_slice(&sol);

                if sol.iter().all(|&v| v == 0.0) {
                    // the exact block minimizer is zero: the enrichment
                    // itself is zero and has converged
                    for f in &mut mode.factors {
                        f.iter_mut().for_each(|v| *v = 0.0);
                    }
                    converged = true;
                    all_modes.clear();
                    all_modes.extend_from_slice(previous);
                    all_modes.push(mode.clone());
                    energy_trace.push(self.energy_of(&all_modes).total);
                    break 'outer;
                }

                all_modes.clear();
                all_modes.extend_from_slice(previous);
                all_modes.push(mode.clone());
                energy_trace.push(self.energy_of(&all_modes).total);
            }
            let snap = balanced_snapshot(mode);
            let delta = snapshot_delta(&prev_snapshot, &snap);
            prev_snapshot = snap;
            if delta <= cfg.tol {
                converged = true;
                break;
            }
        }
        Ok(AdOutcome {
            sweeps,
            converged,
            reinitialized,
            energy_trace,
        })
    }

    /// Joint block solve over all modes for one axis (the CD building
    /// block): minimizes Π exactly in that block. Singular blocks (e.g.
    /// rank-deficient frozen factors at large Q) fall back to a pseudo-
    /// inverse solve, which keeps the update an exact block minimization.
    fn block_solve_axis(&self, modes: &mut [Mode], a: usize) -> Result<()> {
        let qn = modes.len();
        let dim = self.dim();
        let n = self.mesh.axis(a).len();
        let ni = n - 2;
        if qn == 0 || ni == 0 {
            return Ok(());
        }
        let mut t_gram = vec![vec![vec![0.0; qn]; qn]; dim];
        let mut s_gram = vec![vec![vec![0.0; qn]; qn]; dim];
        for ax in 0..dim {
            if ax == a {
                continue;
            }
            for p in 0..qn {
                for q in p..qn {
                    let t = self.axes[ax]
                        .m
                        .form(&modes[p].factors[ax], &modes[q].factors[ax]);
                    let s = self.axes[ax]
                        .k
                        .form(&modes[p].factors[ax], &modes[q].factors[ax]);
                    t_gram[ax][p][q] = t;
                    t_gram[ax][q][p] = t;
                    s_gram[ax][p][q] = s;
                    s_gram[ax][q][p] = s;
                }
            }
        }
        let kd = self.axes[a].k_int.to_dense();
        let md = self.axes[a].m_int.to_dense();
        let mut h = nalgebra::DMatrix::<f64>::zeros(qn * ni, qn * ni);
        let mut rhs = nalgebra::DVector::<f64>::zeros(qn * ni);
        for p in 0..qn {
            for q in 0..qn {
                let mut ck = 1.0;
                for ax in 0..dim {
                    if ax != a {
                        ck *= t_gram[ax][p][q];
                    }
                }
                let mut cm = 0.0;
                for d in 0..dim {
                    if d == a {
                        continue;
                    }
                    let mut c = s_gram[d][p][q];
                    for ax in 0..dim {
                        if ax != a && ax != d {
                            c *= t_gram[ax][p][q];
                        }
                    }
                    cm += c;
                }
                for i in 0..ni {
                    for j in 0..ni {
                        h[(p * ni + i, q * ni + j)] = ck * kd[(i, j)] + cm * md[(i, j)];
                    }
                }
            }
            let lf = self.load_linear_form(&modes[p], a);
            for i in 0..ni {
                rhs[p * ni + i] = lf[i + 1];
            }
        }
        let sol = match nalgebra::Cholesky::new(h.clone()) {
            Some(chol) => chol.solve(&rhs),
            None => crate::linalg::pseudo_solve(&h, &rhs, 1e-12),
        };
        for (p, mode) in modes.iter_mut().enumerate() {
            mode.factors[a][0] = 0.0;
            mode.factors[a][n - 1] = 0.0;
            for i in 0..ni {
                mode.factors[a][i + 1] = sol[p * ni + i];
            }
        }
        Ok(())
    }

    /// Euclidean norm of ∂Π/∂(all coefficients) at the current modes.
    pub fn coefficient_grad_norm(&self, modes: &[Mode]) -> f64 {
        let qn = modes.len();
        let dim = self.dim();
        let mut total = 0.0;
        for a in 0..dim {
            let n = self.mesh.axis(a).len();
            for r in 0..qn {
                let mut g = vec![0.0; n];
                for q in 0..qn {
                    let mut ck = 1.0;
                    let mut cm = 0.0;
                    for ax in 0..dim {
                        if ax == a {
                            continue;
                        }
                        ck *= self.axes[ax]
                            .m
                            .form(&modes[r].factors[ax], &modes[q].factors[ax]);
                    }
                    for d in 0..dim {
                        if d == a {
                            continue;
                        }
                        let mut c = self.axes[d]
                            .k
                            .form(&modes[r].factors[d], &modes[q].factors[d]);
                        for ax in 0..dim {
                            if ax != a && ax != d {
                                c *= self.axes[ax]
                                    .m
                                    .form(&modes[r].factors[ax], &modes[q].factors[ax]);
                            }
                        }
                        cm += c;
                    }
                    axpy(&mut g, ck, &self.axes[a].k.matvec(&modes[q].factors[a]));
                    axpy(&mut g, cm, &self.axes[a].m.matvec(&modes[q].factors[a]));
                }
                let lf = self.load_linear_form(&modes[r], a);
                for i in 1..n - 1 {
                    let gi = g[i] - lf[i];
                    total += gi * gi;
                }
            }
        }
        total.sqrt()
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

/// Seeded random unit vector with boundary entries zeroed.
pub(crate) fn random_unit_factor(grid: &Grid1D, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = grid.len();
    let mut v = vec![0.0; n];
    for x in v.iter_mut().take(n - 1).skip(1) {
        *x = rng.random::<f64>() - 0.5;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if n > 2 {
        v[1] = 1.0;
    }
    v
}

fn balanced_snapshot(mode: &Mode) -> Mode {
    let mut m = mode.clone();
    normalize_mode(&mut m);
    m
}

fn snapshot_delta(a: &Mode, b: &Mode) -> f64 {
    let mut worst: f64 = 0.0;
    for (fa, fb) in a.factors.iter().zip(&b.factors) {
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

/// Greedy-mode solver parameters.
#[derive(Debug, Clone, Copy)]
pub struct PgdConfig {
    pub seed: u64,
    pub ad: AdConfig,
    /// Enrichment stops early when the relative energy decrease falls
    /// below this threshold.
    pub stagnation_rel: f64,
    pub gauss_order: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            ad: AdConfig::default(),
            stagnation_rel: 1e-12,
            gauss_order: DEFAULT_GAUSS_ORDER,
        }
    }
}

/// Outcome of an incremental PGD solve.
#[derive(Debug, Clone)]
pub struct PgdOutcome {
    pub solution: SeparatedSolution,
    /// Every kept enrichment's alternating-direction loop converged.
    pub converged: bool,
    /// Enrichment stopped before the requested mode count.
    pub stagnated: bool,
    /// Π after 0, 1, 2, ... modes.
    pub energies: Vec<f64>,
}

/// Incremental PGD: modes computed greedily, each enrichment solved by
/// alternating direction to stagnation.
pub fn solve_pgd(mesh: &TensorMesh, source: &SourceTerm, q: usize) -> Result<PgdOutcome> {
    solve_pgd_with(mesh, source, q, &PgdConfig::default())
}

pub fn solve_pgd_with(
    mesh: &TensorMesh,
    source: &SourceTerm,
    q: usize,
    cfg: &PgdConfig,
) -> Result<PgdOutcome> {
    if q < 1 {
        return Err(Error::InvalidRange("mode count must be >= 1".into()));
    }
    let ws = SeparatedWorkspace::new(mesh, source, cfg.gauss_order)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut modes: Vec<Mode> = Vec::new();
    let mut energies = vec![0.0];
    let mut converged = true;
    let mut stagnated = false;
    for _ in 0..q {
        let mut mode = Mode {
            factors: mesh
                .axes()
                .iter()
                .map(|g| random_unit_factor(g, &mut rng))
                .collect(),
        };
        let out = ws.alternating_direction(&modes, &mut mode, &cfg.ad, &mut rng)?;
        let mut candidate = modes.clone();
        candidate.push(mode.clone());
        let e_new = ws.energy_of(&candidate).total;
        let e_prev = *energies.last().unwrap();
        if e_prev - e_new <= cfg.stagnation_rel * e_prev.abs() {
            stagnated = true;
            break;
        }
        converged &= out.converged;
        normalize_mode(&mut mode);
        modes.push(mode);
        energies.push(e_new);
    }
    Ok(PgdOutcome {
        solution: SeparatedSolution::new(mesh.clone(), modes)?,
        converged,
        stagnated,
        energies,
    })
}

/// Outcome of a joint (CD) solve.
#[derive(Debug, Clone)]
pub struct CdOutcome {
    pub solution: SeparatedSolution,
    pub converged: bool,
    pub sweeps: usize,
    pub grad_norm: f64,
    /// Π after each block sweep.
    pub energies: Vec<f64>,
}

/// Canonical decomposition: all `q` modes minimized jointly by block
/// coordinate descent over axes, each block solved exactly.
pub fn solve_cd(
    mesh: &TensorMesh,
    source: &SourceTerm,
    q: usize,
    opt: &OptimizerConfig,
) -> Result<CdOutcome> {
    if q < 1 {
        return Err(Error::InvalidRange("mode count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let init: Vec<Mode> = (0..q)
        .map(|_| Mode {
            factors: mesh
                .axes()
                .iter()
                .map(|g| random_unit_factor(g, &mut rng))
                .collect(),
        })
        .collect();
    solve_cd_from_modes(mesh, source, init, opt)
}

/// CD warm-started from an existing solution (padded with zero modes when
/// the requested count exceeds the initial one).
pub fn solve_cd_from(
    mesh: &TensorMesh,
    source: &SourceTerm,
    init: &SeparatedSolution,
    q: usize,
    opt: &OptimizerConfig,
) -> Result<CdOutcome> {
    let mut modes = init.modes().to_vec();
    modes.truncate(q);
    while modes.len() < q {
        modes.push(Mode::zeros(&mesh.shape()));
    }
    solve_cd_from_modes(mesh, source, modes, opt)
}

fn solve_cd_from_modes(
    mesh: &TensorMesh,
    source: &SourceTerm,
    mut modes: Vec<Mode>,
    opt: &OptimizerConfig,
) -> Result<CdOutcome> {
    let ws = SeparatedWorkspace::new(mesh, source, DEFAULT_GAUSS_ORDER)?;
    let mut energies = vec![ws.energy_of(&modes).total];
    let mut converged = false;
    let mut sweeps = 0;
    let mut grad_norm = f64::INFINITY;
    let mut stagnant = 0usize;
    for sweep in 0..opt.max_iters {
        sweeps = sweep + 1;
        for a in 0..mesh.dim() {
            ws.block_solve_axis(&mut modes, a)?;
        }
        let e = ws.energy_of(&modes).total;
        let e_prev = *energies.last().unwrap();
        energies.push(e);
        grad_norm = ws.coefficient_grad_norm(&modes);
        if grad_norm <= opt.grad_tol {
            converged = true;
            break;
        }
        if (e_prev - e).abs() <= 1e-15 * e.abs().max(1e-300) {
            stagnant += 1;
            if stagnant >= 2 {
                // energy at its floating-point floor
                converged = true;
                break;
            }
        } else {
            stagnant = 0;
        }
    }
    for m in &mut modes {
        normalize_mode(m);
    }
    Ok(CdOutcome {
        solution: SeparatedSolution::new(mesh.clone(), modes)?,
        converged,
        sweeps,
        grad_norm,
        energies,
    })
}

/// SVD of a 2D nodal field: modes `(σ_q w_q, v_q)` sorted by descending
/// singular value, truncated at the numerical rank (`1e-12 σ_max`).
pub fn svd_modes(u: &NodalField) -> Result<SeparatedSolution> {
    if u.mesh().dim() != 2 {
        return Err(Error::IncompatibleDomain(
            "svd_modes applies to 2D fields only".into(),
        ));
    }
    let shape = u.mesh().shape();
    let (n1, n2) = (shape[0], shape[1]);
    let mut m = nalgebra::DMatrix::<f64>::zeros(n1, n2);
    for i in 0..n1 {
        for j in 0..n2 {
            m[(i, j)] = u.values()[IxDyn(&[i, j])];
        }
    }
    let svd = crate::linalg::jacobi_svd(&m);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let mut modes = Vec::new();
    for (qi, &sigma) in svd.sigma.iter().enumerate() {
        if !(sigma > 1e-12 * smax) {
            continue;
        }
        let beta: Vec<f64> = (0..n1).map(|i| sigma * svd.u[(i, qi)]).collect();
        let gamma: Vec<f64> = (0..n2).map(|j| svd.v[(j, qi)]).collect();
        let mut mode = Mode {
            factors: vec![beta, gamma],
        };
        normalize_mode(&mut mode);
        modes.push(mode);
    }
    SeparatedSolution::new(u.mesh().clone(), modes)
}

/// Solution method tags used for DoF accounting and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Fem,
    Cd,
    Pgd,
    HidennPgd,
    Hidenn,
    PgdMapped,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Fem => "fem",
            Method::Cd => "cd",
            Method::Pgd => "pgd",
            Method::HidennPgd => "hidenn-pgd",
            Method::Hidenn => "hidenn",
            Method::PgdMapped => "pgd-mapped",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Some(match s {
            "fem" => Method::Fem,
            "cd" => Method::Cd,
            "pgd" => Method::Pgd,
            "hidenn-pgd" => Method::HidennPgd,
            "hidenn" => Method::Hidenn,
            "pgd-mapped" => Method::PgdMapped,
            _ => return None,
        })
    }
}

/// Free degrees of freedom per method, counting interior nodes only.
///
/// Separated methods carry one coefficient per interior node per axis and
/// mode; the r-adaptive variants add the movable nodal positions (per axis
/// for the separated case; for the full field, positions are counted as one
/// extra value set per node, mirroring the published DoF-table row shape,
/// whose printed total for the adaptive full field is internally
/// inconsistent anyway).
pub fn dof_count(method: Method, mesh: &TensorMesh, q: usize) -> usize {
    let ints = mesh.interior_shape();
    let sum: usize = ints.iter().sum();
    let prod: usize = ints.iter().product();
    match method {
        Method::Fem => prod,
        Method::Cd | Method::Pgd | Method::PgdMapped => sum * q,
        Method::HidennPgd => sum * q + sum,
        Method::Hidenn => 2 * prod,
    }
}
