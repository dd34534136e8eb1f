//! Tensor-product grids clipped to a domain, with Shortley–Weller cut-cell
//! arms, sparse operator assembly and interpolation of nodal fields.
//!
//! Nodes strictly inside the domain are unknowns; every arm that leaves the
//! domain ends at a Dirichlet point placed exactly on the boundary. Interior
//! nodes within `1e-6` of a spacing from the boundary are themselves treated
//! as Dirichlet points.

use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{Matrix6, Vector6};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::geometry::{ksum, pt, Point};

const EAST: usize = 0;
const WEST: usize = 1;
const NORTH: usize = 2;
const SOUTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Unknown(u32),
    Dirichlet(u32),
    Exterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Unknown(u32),
    Dirichlet(u32),
}

#[derive(Debug, Clone, Copy)]
pub struct Arm {
    pub target: Target,
    pub len: f64,
}

/// A tensor grid clipped to a domain.
#[derive(Debug)]
pub struct Grid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    uniform_h: Option<f64>,
    kinds: Vec<NodeKind>,
    unknown_nodes: Vec<(usize, usize)>,
    arms: Vec<[Arm; 4]>,
    dirichlet: Vec<Point>,
}

impl Grid {
    /// Uniform square grid with `n` nodes per axis covering the domain's bounding square.
    pub fn uniform(domain: &DomainSpec, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidEngine(format!("grid needs at least 8 nodes per axis, got {n}")));
        }
        let half = domain.bounding_half_width();
        let h = 2.0 * half / (n - 1) as f64;
        let axis: Vec<f64> = (0..n).map(|i| -half + i as f64 * h).collect();
        let mut g = Self::build(domain, axis.clone(), axis)?;
        g.uniform_h = Some(h);
        Ok(g)
    }

    /// Grid on arbitrary increasing node coordinates.
    pub fn from_axes(domain: &DomainSpec, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Self::build(domain, xs, ys)
    }

    fn build(domain: &DomainSpec, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let (nx, ny) = (xs.len(), ys.len());
        if nx < 4 || ny < 4 || xs.windows(2).any(|w| w[1] <= w[0]) || ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidEngine("grid axes must be strictly increasing with >= 4 nodes".into()));
        }
        let pos = |i: usize, j: usize| pt(xs[i], ys[j]);
        let inside: Vec<bool> =
            (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).map(|(i, j)| domain.contains(pos(i, j))).collect();
        let id = |i: usize, j: usize| j * nx + i;
        let neighbours = |i: usize, j: usize| -> [Option<(usize, usize)>; 4] {
            [
                (i + 1 < nx).then(|| (i + 1, j)),
                (i > 0).then(|| (i - 1, j)),
                (j + 1 < ny).then(|| (i, j + 1)),
                (j > 0).then(|| (i, j - 1)),
            ]
        };
        let spacing = |i: usize, j: usize, dir: usize| -> f64 {
            match dir {
                EAST => xs[i + 1] - xs[i],
                WEST => xs[i] - xs[i - 1],
                NORTH => ys[j + 1] - ys[j],
                _ => ys[j] - ys[j - 1],
            }
        };

        // Pass 1: classify nodes hugging the boundary as Dirichlet points.
        let mut kinds = vec![NodeKind::Exterior; nx * ny];
        let mut dirichlet = Vec::new();
        let mut unknown_nodes = Vec::new();
        let mut crossings: Vec<[Option<f64>; 4]> = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if !inside[id(i, j)] {
                    continue;
                }
                let p = pos(i, j);
                let mut cut = [None; 4];
                let mut hugging = false;
                for (dir, nb) in neighbours(i, j).iter().enumerate() {
                    let Some((a, b)) = *nb else {
                        return Err(Error::InvalidEngine("grid does not cover the domain".into()));
                    };
                    if !inside[id(a, b)] {
                        let t = domain.segment_crossing(p, pos(a, b));
                        let len = t * spacing(i, j, dir);
                        if len < 1e-6 * spacing(i, j, dir) {
                            hugging = true;
                        }
                        cut[dir] = Some(len);
                    }
                }
                if hugging {
                    kinds[id(i, j)] = NodeKind::Dirichlet(dirichlet.len() as u32);
                    dirichlet.push(p);
                } else {
                    kinds[id(i, j)] = NodeKind::Unknown(unknown_nodes.len() as u32);
                    unknown_nodes.push((i, j));
                    crossings.push(cut);
                }
            }
        }

        // Pass 2: arms.
        let mut arms = Vec::with_capacity(unknown_nodes.len());
        for (k, &(i, j)) in unknown_nodes.iter().enumerate() {
            let p = pos(i, j);
            let nb = neighbours(i, j);
            let mut a = [Arm { target: Target::Unknown(0), len: 0.0 }; 4];
            for dir in 0..4 {
                let (ni, nj) = nb[dir].expect("checked in pass 1");
                a[dir] = match (crossings[k][dir], kinds[id(ni, nj)]) {
                    (Some(len), _) => {
                        let unit = (pos(ni, nj) - p) / spacing(i, j, dir);
                        let idx = dirichlet.len() as u32;
                        dirichlet.push(p + len * unit);
                        Arm { target: Target::Dirichlet(idx), len }
                    }
                    (None, NodeKind::Unknown(u)) => Arm { target: Target::Unknown(u), len: spacing(i, j, dir) },
                    (None, NodeKind::Dirichlet(d)) => Arm { target: Target::Dirichlet(d), len: spacing(i, j, dir) },
                    (None, NodeKind::Exterior) => unreachable!("exterior neighbour without crossing"),
                };
            }
            arms.push(a);
        }
        Ok(Self { xs, ys, uniform_h: None, kinds, unknown_nodes, arms, dirichlet })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn uniform_spacing(&self) -> Option<f64> {
        self.uniform_h
    }

    pub fn num_unknowns(&self) -> usize {
        self.unknown_nodes.len()
    }

    pub fn dirichlet_points(&self) -> &[Point] {
        &self.dirichlet
    }

    pub fn unknown_position(&self, k: usize) -> Point {
        let (i, j) = self.unknown_nodes[k];
        pt(self.xs[i], self.ys[j])
    }

    pub fn unknown_index(&self, k: usize) -> (usize, usize) {
        self.unknown_nodes[k]
    }

    pub fn unknown_positions(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.num_unknowns()).map(|k| self.unknown_position(k))
    }

    pub fn arms(&self, k: usize) -> &[Arm; 4] {
        &self.arms[k]
    }

    pub fn kind(&self, i: usize, j: usize) -> NodeKind {
        self.kinds[j * self.xs.len() + i]
    }

    /// Largest local spacing of the grid lines through `x`.
    pub fn local_spacing(&self, x: Point) -> f64 {
        let sx = local_axis_spacing(&self.xs, x.x);
        let sy = local_axis_spacing(&self.ys, x.y);
        sx.max(sy)
    }

    /// Dual-cell area of every unknown (nodal quadrature weights). Cut arms
    /// extend the cell all the way to the boundary.
    pub fn cell_weights(&self) -> Vec<f64> {
        self.arms
            .iter()
            .map(|a| {
                let ext = |arm: &Arm| match arm.target {
                    Target::Unknown(_) => 0.5 * arm.len,
                    Target::Dirichlet(_) => arm.len,
                };
                (ext(&a[EAST]) + ext(&a[WEST])) * (ext(&a[NORTH]) + ext(&a[SOUTH]))
            })
            .collect()
    }

    fn nine_point_eligible(&self, k: usize) -> Option<[Target; 4]> {
        let h = self.uniform_h?;
        let a = &self.arms[k];
        if a.iter().any(|arm| (arm.len - h).abs() > 1e-12 * h) {
            return None;
        }
        let (i, j) = self.unknown_nodes[k];
        let mut diag = [Target::Unknown(0); 4];
        for (slot, (di, dj)) in [(1i64, 1i64), (-1, 1), (1, -1), (-1, -1)].iter().enumerate() {
            let (ni, nj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
            diag[slot] = match self.kind(ni, nj) {
                NodeKind::Unknown(u) => Target::Unknown(u),
                NodeKind::Dirichlet(d) => Target::Dirichlet(d),
                NodeKind::Exterior => return None,
            };
        }
        Some(diag)
    }

    /// Assembles the discrete `-Δ` as `A u + C g` where `u` are the unknowns
    /// and `g` the Dirichlet values. With `nine_point`, rows whose full
    /// 3×3 neighbourhood lies in the domain use the compact 9-point stencil
    /// (fourth order for harmonic functions); all other rows use the
    /// Shortley–Weller 5-point stencil.
    pub fn assemble_neg_laplacian(&self, nine_point: bool) -> Operator {
        let mut entries = Vec::with_capacity(9 * self.num_unknowns());
        let mut coupling = Vec::new();
        let mut push = |row: usize, t: Target, v: f64, entries: &mut Vec<(usize, usize, f64)>| match t {
            Target::Unknown(u) => entries.push((row, u as usize, v)),
            Target::Dirichlet(d) => coupling.push((row, d as usize, v)),
        };
        for k in 0..self.num_unknowns() {
            let a = &self.arms[k];
            if nine_point {
                if let Some(diag) = self.nine_point_eligible(k) {
                    let h = self.uniform_h.expect("eligible implies uniform");
                    let s = 1.0 / (6.0 * h * h);
                    entries.push((k, k, 20.0 * s));
                    for arm in a {
                        push(k, arm.target, -4.0 * s, &mut entries);
                    }
                    for t in diag {
                        push(k, t, -s, &mut entries);
                    }
                    continue;
                }
            }
            let (cx, cy) = (2.0 / (a[EAST].len + a[WEST].len), 2.0 / (a[NORTH].len + a[SOUTH].len));
            let mut diag = 0.0;
            for (dir, c) in [(EAST, cx), (WEST, cx), (NORTH, cy), (SOUTH, cy)] {
                let w = c / a[dir].len;
                diag += w;
                push(k, a[dir].target, -w, &mut entries);
            }
            entries.push((k, k, diag));
        }
        entries.sort_by_key(|&(r, c, _)| (c, r));
        Operator { n: self.num_unknowns(), entries, coupling }
    }

    /// Matrix-free Shortley–Weller `-Δ_h u` (Dirichlet values `g`), coded
    /// independently of [`Grid::assemble_neg_laplacian`].
    pub fn apply_neg_laplacian5(&self, u: &[f64], g: &[f64]) -> Vec<f64> {
        let val = |t: Target| match t {
            Target::Unknown(i) => u[i as usize],
            Target::Dirichlet(d) => g[d as usize],
        };
        self.arms
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let (he, hw, hn, hs) = (a[EAST].len, a[WEST].len, a[NORTH].len, a[SOUTH].len);
                let uxx = ((val(a[EAST].target) - u[k]) / he - (u[k] - val(a[WEST].target)) / hw) * 2.0 / (he + hw);
                let uyy = ((val(a[NORTH].target) - u[k]) / hn - (u[k] - val(a[SOUTH].target)) / hs) * 2.0 / (hn + hs);
                -(uxx + uyy)
            })
            .collect()
    }

    fn locate(axis: &[f64], v: f64) -> usize {
        let i = axis.partition_point(|&a| a <= v);
        i.saturating_sub(1).min(axis.len() - 2)
    }
}

fn local_axis_spacing(axis: &[f64], v: f64) -> f64 {
    let i = Grid::locate(axis, v);
    let mut s = axis[i + 1] - axis[i];
    if i > 0 {
        s = s.max(axis[i] - axis[i - 1]);
    }
    if i + 2 < axis.len() {
        s = s.max(axis[i + 2] - axis[i + 1]);
    }
    s
}

/// Sparse operator `A u + C g` over the unknowns of a grid.
#[derive(Debug, Clone)]
pub struct Operator {
    n: usize,
    /// (row, col, value), sorted column-major.
    entries: Vec<(usize, usize, f64)>,
    /// (row, dirichlet index, value).
    coupling: Vec<(usize, usize, f64)>,
}

impl Operator {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `C g` as a dense vector.
    pub fn boundary_term(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(r, d, v) in &self.coupling {
            out[r] += v * g[d];
        }
        out
    }

    /// `A u + C g`.
    pub fn apply(&self, u: &[f64], g: &[f64]) -> Vec<f64> {
        let mut out = self.boundary_term(g);
        for &(r, c, v) in &self.entries {
            out[r] += v * u[c];
        }
        out
    }

    /// Sparse matrix `A + diag(shift)`.
    pub fn matrix_with_diagonal(&self, shift: Option<&[f64]>) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<Triplet<usize, usize, f64>> = self
            .entries
            .iter()
            .map(|&(r, c, v)| {
                let extra = match shift {
                    Some(s) if r == c => s[r],
                    _ => 0.0,
                };
                Triplet::new(r, c, v + extra)
            })
            .collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| Error::SolverDiverged(format!("sparse assembly failed: {e:?}")))
    }
}

/// Sparse LU factorization of an operator, with residual-checked solves.
pub struct Factorized {
    matrix: SparseColMat<usize, f64>,
    lu: Lu<usize, f64>,
}

impl Factorized {
    pub fn new(matrix: SparseColMat<usize, f64>, symbolic: Option<&SymbolicLu<usize>>) -> Result<Self> {
        let lu = match symbolic {
            Some(s) => Lu::try_new_with_symbolic(s.clone(), matrix.as_ref()),
            None => matrix.sp_lu(),
        }
        .map_err(|e| Error::SolverDiverged(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { matrix, lu })
    }

    pub fn symbolic(matrix: &SparseColMat<usize, f64>) -> Result<SymbolicLu<usize>> {
        SymbolicLu::try_new(matrix.symbolic()).map_err(|e| Error::SolverDiverged(format!("symbolic LU failed: {e:?}")))
    }

    /// Solves `A x = b`, with one step of iterative refinement, and fails
    /// unless the relative residual is below `tol`.
    pub fn solve(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n = b.len();
        let rhs = Col::<f64>::from_fn(n, |i| b[i]);
        let mut x = self.lu.solve(&rhs);
        let mut r = &rhs - &self.matrix * &x;
        let correction = self.lu.solve(&r);
        x += &correction;
        r = &rhs - &self.matrix * &x;
        let rnorm = (0..n).map(|i| r[i].abs()).fold(0.0, f64::max);
        let bnorm = (0..n).map(|i| rhs[i].abs()).fold(0.0, f64::max);
        let xnorm = (0..n).map(|i| x[i].abs()).fold(0.0, f64::max);
        let scale = bnorm + self.row_norm() * xnorm;
        if rnorm.is_nan() || rnorm > tol * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::SolverDiverged(format!("relative residual {:e} above {tol:e}", rnorm / scale)));
        }
        Ok((0..n).map(|i| x[i]).collect())
    }

    fn row_norm(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut rows = vec![0.0; n];
        let m = self.matrix.as_ref();
        for c in 0..n {
            for (r, v) in m.row_idx_of_col(c).zip(m.val_of_col(c)) {
                rows[r] += v.abs();
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }
}

/// Nodal values on a grid together with the Dirichlet values.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Arc<Grid>,
    unknowns: Vec<f64>,
    dirichlet: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Arc<Grid>, unknowns: Vec<f64>, dirichlet: Vec<f64>) -> Self {
        assert_eq!(unknowns.len(), grid.num_unknowns());
        assert_eq!(dirichlet.len(), grid.dirichlet_points().len());
        Self { grid, unknowns, dirichlet }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn unknowns(&self) -> &[f64] {
        &self.unknowns
    }

    pub fn dirichlet(&self) -> &[f64] {
        &self.dirichlet
    }

    pub fn node_value(&self, i: usize, j: usize) -> Option<f64> {
        match self.grid.kind(i, j) {
            NodeKind::Unknown(u) => Some(self.unknowns[u as usize]),
            NodeKind::Dirichlet(d) => Some(self.dirichlet[d as usize]),
            NodeKind::Exterior => None,
        }
    }

    /// Interpolated value: tensor cubic Lagrange where the 4×4 stencil is in
    /// the domain, a weighted local quadratic fit (including boundary
    /// points) elsewhere.
    pub fn value(&self, x: Point) -> f64 {
        let g = &*self.grid;
        let i0 = Grid::locate(&g.xs, x.x);
        let j0 = Grid::locate(&g.ys, x.y);
        self.bicubic_at(x).unwrap_or_else(|| self.local_fit(i0, j0, x).map_or(f64::NAN, |(v, _)| v))
    }

    fn bicubic_at(&self, x: Point) -> Option<f64> {
        let g = &*self.grid;
        let (nx, ny) = (g.xs.len(), g.ys.len());
        let i0 = Grid::locate(&g.xs, x.x);
        let j0 = Grid::locate(&g.ys, x.y);
        if i0 >= 1 && j0 >= 1 && i0 + 2 < nx && j0 + 2 < ny {
            self.bicubic(i0, j0, x)
        } else {
            None
        }
    }

    fn bicubic(&self, i0: usize, j0: usize, x: Point) -> Option<f64> {
        let g = &*self.grid;
        let wx = lagrange4(&g.xs[i0 - 1..i0 + 3], x.x);
        let wy = lagrange4(&g.ys[j0 - 1..j0 + 3], x.y);
        let mut acc = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            let mut row = 0.0;
            for (a, wxa) in wx.iter().enumerate() {
                row += wxa * self.node_value(i0 - 1 + a, j0 - 1 + b)?;
            }
            acc += wyb * row;
        }
        Some(acc)
    }

    /// Weighted quadratic fit around `x`: value and gradient.
    fn local_fit(&self, i0: usize, j0: usize, x: Point) -> Option<(f64, Point)> {
        let g = &*self.grid;
        let (nx, ny) = (g.xs.len(), g.ys.len());
        let h = g.local_spacing(x);
        for reach in 1..=4usize {
            let mut pts: Vec<(Point, f64)> = Vec::new();
            let (ilo, ihi) = (i0.saturating_sub(reach), (i0 + reach + 1).min(nx - 1));
            let (jlo, jhi) = (j0.saturating_sub(reach), (j0 + reach + 1).min(ny - 1));
            for j in jlo..=jhi {
                for i in ilo..=ihi {
                    match g.kind(i, j) {
                        NodeKind::Unknown(u) => {
                            pts.push((pt(g.xs[i], g.ys[j]), self.unknowns[u as usize]));
                            for arm in &g.arms[u as usize] {
                                if let Target::Dirichlet(d) = arm.target {
                                    pts.push((g.dirichlet[d as usize], self.dirichlet[d as usize]));
                                }
                            }
                        }
                        NodeKind::Dirichlet(d) => pts.push((pt(g.xs[i], g.ys[j]), self.dirichlet[d as usize])),
                        NodeKind::Exterior => {}
                    }
                }
            }
            if pts.len() >= 8 {
                if let Some(fit) = quadratic_fit(&pts, x, h) {
                    return Some(fit);
                }
            }
        }
        None
    }

    /// Centered-difference gradient of the bicubic interpolant. Near the
    /// boundary the interpolant switches to local fits that jump between
    /// cells, so there the gradient of the fit at `x` is used instead.
    pub fn gradient(&self, x: Point, step: f64) -> Point {
        let ex = pt(step, 0.0);
        let ey = pt(0.0, step);
        let stencil = [x + ex, x - ex, x + ey, x - ey].map(|p| self.bicubic_at(p));
        if let [Some(xp), Some(xm), Some(yp), Some(ym)] = stencil {
            return pt((xp - xm) / (2.0 * step), (yp - ym) / (2.0 * step));
        }
        let g = &*self.grid;
        let (i0, j0) = (Grid::locate(&g.xs, x.x), Grid::locate(&g.ys, x.y));
        self.local_fit(i0, j0, x).map_or(pt(f64::NAN, f64::NAN), |(_, grad)| grad)
    }

    /// Second-order nodal gradients at the unknowns from the (possibly cut)
    /// arms: derivative of the quadratic through the node and its two arms.
    pub fn nodal_gradients(&self) -> Vec<Point> {
        let g = &*self.grid;
        let val = |t: Target| match t {
            Target::Unknown(u) => self.unknowns[u as usize],
            Target::Dirichlet(d) => self.dirichlet[d as usize],
        };
        let d1 = |u: f64, fwd: &Arm, bwd: &Arm| {
            let (a, b) = (fwd.len, bwd.len);
            (b * b * (val(fwd.target) - u) + a * a * (u - val(bwd.target))) / (a * b * (a + b))
        };
        (0..self.unknowns.len())
            .map(|k| {
                let a = &g.arms[k];
                let u = self.unknowns[k];
                pt(d1(u, &a[EAST], &a[WEST]), d1(u, &a[NORTH], &a[SOUTH]))
            })
            .collect()
    }

    /// Nodal quadrature `Σ w_k f(x_k, u_k)` over the unknowns.
    pub fn integrate<F: Fn(Point, f64) -> f64>(&self, weights: &[f64], f: F) -> f64 {
        ksum((0..self.unknowns.len()).map(|k| weights[k] * f(self.grid.unknown_position(k), self.unknowns[k])))
    }

    /// CSV rows `x,y,value` for every unknown and Dirichlet point.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "value"])?;
        for (k, v) in self.unknowns.iter().enumerate() {
            let p = self.grid.unknown_position(k);
            w.write_record([p.x.to_string(), p.y.to_string(), v.to_string()])?;
        }
        for (p, v) in self.grid.dirichlet.iter().zip(&self.dirichlet) {
            w.write_record([p.x.to_string(), p.y.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn lagrange4(nodes: &[f64], x: f64) -> [f64; 4] {
    let mut w = [1.0; 4];
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                w[a] *= (x - nodes[b]) / (nodes[a] - nodes[b]);
            }
        }
    }
    w
}

fn quadratic_fit(pts: &[(Point, f64)], x: Point, h: f64) -> Option<(f64, Point)> {
    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for (p, v) in pts {
        let d = (p - x) / h;
        let w = 1.0 / (1.0 + d.norm_squared()).powi(2);
        let basis = Vector6::new(1.0, d.x, d.y, d.x * d.x, d.x * d.y, d.y * d.y);
        ata += w * basis * basis.transpose();
        atb += w * *v * basis;
    }
    let sol = ata.cholesky()?.solve(&atb);
    let grad = pt(sol[1], sol[2]) / h;
    (sol[0].is_finite() && grad.x.is_finite() && grad.y.is_finite()).then_some((sol[0], grad))
}
