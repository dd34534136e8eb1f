//! Damped Newton solver for the regular problem `-Δv = ε² a(x) e^v`,
//! `v = 0` on `∂Ω`, continuation in `ε`, and the concentration observables.
//!
//! The solver grid is a tensor grid graded toward the bubble cores so that
//! the local spacing there is below `εμ/8` while the node count per axis
//! stays at `grid_n`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ansatz::{mu_from_config, ApproxSolution, Field, ProjectionMode};
use crate::domain::DomainSpec;
use crate::energy::{self, Configuration, SingularSet};
use crate::error::{Error, Result};
use crate::geometry::{ksum, polar, pt, KahanSum, Point};
use crate::green::GreenEngine;
use crate::grid::{Factorized, Grid, GridField, Target};

/// Nodal solution of the regular problem; the boundary trace is zero.
pub type DiscreteField = GridField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative stopping tolerance on `‖F‖_∞ / (1 + ‖ε² a e^v‖_∞)`.
    pub newton_tol: f64,
    pub max_newton_iter: usize,
    pub max_halvings: u32,
    /// Target core spacing is `εμ / resolution`; never coarser than `εμ/8`.
    pub resolution: f64,
    /// Largest admissible grading slope of the spacing.
    pub max_grading: f64,
    /// Radius of the reported mass balls; derived from the peaks when absent.
    pub ball_radius: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-9,
            max_newton_iter: 50,
            max_halvings: 40,
            resolution: 32.0,
            max_grading: 0.3,
            ball_radius: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallMass {
    pub center: Point,
    pub radius: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub epsilon: f64,
    pub grid_n: usize,
    pub num_unknowns: usize,
    pub min_spacing: f64,
    #[serde(skip)]
    pub field: DiscreteField,
    pub converged: bool,
    pub residual_norm: f64,
    pub residual_history: Vec<f64>,
    pub newton_iters: usize,
    pub min_value: f64,
    pub max_value: f64,
    pub total_mass: f64,
    pub ball_masses: Vec<BallMass>,
    pub peaks: Vec<Point>,
    /// Filled in by [`continuation`], which knows the limiting configuration.
    pub farfield_deviation: Option<f64>,
}

/// Coarsest admissible core spacing is `εμ / MIN_RESOLUTION`.
pub const MIN_RESOLUTION: f64 = 8.0;

/// Spacing required at the cores: `ε min_j μ_j / resolution`.
pub fn required_spacing(epsilon: f64, mus: &[f64], resolution: f64) -> f64 {
    epsilon * mus.iter().copied().fold(f64::INFINITY, f64::min) / resolution
}

/// `n` increasing nodes on `[lo, hi]` with local spacing proportional to
/// `min(h_max, min_k (h_fine + β|x - c_k|))`, `β` chosen so that the count
/// comes out exactly. Returns the nodes and the fitted `β`.
pub fn graded_axis(lo: f64, hi: f64, centers: &[f64], h_fine: f64, n: usize) -> (Vec<f64>, f64) {
    let uniform = (hi - lo) / (n - 1) as f64;
    if centers.is_empty() || uniform <= h_fine {
        return ((0..n).map(|i| lo + i as f64 * uniform).collect(), 0.0);
    }
    let h_max = 4.0 * uniform;
    let samples = 200_000;
    let dx = (hi - lo) / samples as f64;
    let density = |beta: f64| -> Vec<f64> {
        // cumulative ∫ 1/h, trapezoid on a fine sampling
        let inv_h = |x: f64| {
            let h = centers.iter().map(|c| h_fine + beta * (x - c).abs()).fold(h_max, f64::min);
            1.0 / h
        };
        let mut cum = Vec::with_capacity(samples + 1);
        cum.push(0.0);
        let mut prev = inv_h(lo);
        let mut acc = 0.0;
        for i in 1..=samples {
            let cur = inv_h(lo + i as f64 * dx);
            acc += 0.5 * (prev + cur) * dx;
            cum.push(acc);
            prev = cur;
        }
        cum
    };
    let target = (n - 1) as f64;
    let (mut b_lo, mut b_hi) = (1e-6f64, 50.0f64);
    for _ in 0..80 {
        let mid = (b_lo * b_hi).sqrt();
        if *density(mid).last().unwrap() > target {
            b_lo = mid;
        } else {
            b_hi = mid;
        }
    }
    let beta = b_hi;
    let cum = density(beta);
    let total = *cum.last().unwrap();
    let mut nodes = Vec::with_capacity(n);
    let mut s = 0;
    for i in 0..n {
        let want = total * i as f64 / (n - 1) as f64;
        while s + 1 < cum.len() - 1 && cum[s + 1] < want {
            s += 1;
        }
        let t = if cum[s + 1] > cum[s] { (want - cum[s]) / (cum[s + 1] - cum[s]) } else { 0.0 };
        nodes.push(lo + (s as f64 + t.clamp(0.0, 1.0)) * dx);
    }
    nodes[0] = lo;
    nodes[n - 1] = hi;
    // exact mirror symmetry when the centers are symmetric about the midpoint
    let mid = 0.5 * (lo + hi);
    let symmetric = centers.iter().all(|c| centers.iter().any(|d| (c + d - 2.0 * mid).abs() < 1e-12));
    if symmetric {
        let copy = nodes.clone();
        for i in 0..n {
            nodes[i] = mid + 0.5 * ((copy[i] - mid) - (copy[n - 1 - i] - mid));
        }
    }
    (nodes, beta)
}

fn distinct(mut v: Vec<f64>, tol: f64) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < tol);
    v
}

/// Solver grid graded toward `cores` with spacing `h_fine` there. Fails
/// with [`Error::GridTooCoarse`] when the grading this needs is steeper
/// than `max_grading`.
pub fn graded_grid(domain: &DomainSpec, cores: &[Point], h_fine: f64, grid_n: usize, max_grading: f64) -> Result<Grid> {
    let half = domain.bounding_half_width();
    let cx = distinct(cores.iter().map(|c| c.x).collect(), 0.5 * h_fine);
    let cy = distinct(cores.iter().map(|c| c.y).collect(), 0.5 * h_fine);
    let (xs, bx) = graded_axis(-half, half, &cx, h_fine, grid_n);
    let (ys, by) = graded_axis(-half, half, &cy, h_fine, grid_n);
    if bx.max(by) > max_grading {
        let center = cores.first().copied().unwrap_or_else(Point::zeros);
        return Err(Error::GridTooCoarse { spacing: 2.0 * half / (grid_n - 1) as f64, required: h_fine, center });
    }
    Grid::from_axes(domain, xs, ys)
}

/// Enforces local spacing `≤ h_required` at every core.
pub fn check_resolution(grid: &Grid, cores: &[Point], h_required: f64) -> Result<()> {
    for &c in cores {
        let h = grid.local_spacing(c);
        if h > h_required {
            return Err(Error::GridTooCoarse { spacing: h, required: h_required, center: c });
        }
    }
    Ok(())
}

/// Analytic `a` at the unknowns (zero exactly at a source).
fn nodal_weight(green: &GreenEngine, z: &SingularSet, grid: &Grid) -> Result<Vec<f64>> {
    grid.unknown_positions()
        .map(|x| match energy::log_weight_a(green, z, x) {
            Ok(la) => Ok(la.exp()),
            Err(Error::PointAtSource(_)) => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect()
}

struct Nonlinearity<'a> {
    eps2_a: &'a [f64],
}

impl Nonlinearity<'_> {
    /// `ε² a e^v` at the unknowns; `None` on overflow.
    fn source(&self, v: &[f64]) -> Option<Vec<f64>> {
        let s: Vec<f64> =
            v.iter().zip(self.eps2_a).map(|(&vi, &c)| if c == 0.0 { 0.0 } else { c * vi.exp() }).collect();
        s.iter().all(|x| x.is_finite()).then_some(s)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton for `F(v) = -Δ_h v - ε² a e^v = 0` on a prepared grid,
/// starting from `initial` sampled at the unknowns.
pub fn newton_solve(
    green: &GreenEngine,
    z: &SingularSet,
    epsilon: f64,
    initial: &dyn Field,
    grid: Arc<Grid>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let diverged = |reason: String| Error::NewtonDiverged { epsilon, reason };
    let op = grid.assemble_neg_laplacian(false);
    let zero_bc = vec![0.0; grid.dirichlet_points().len()];
    let eps2_a: Vec<f64> = nodal_weight(green, z, &grid)?.into_iter().map(|a| epsilon * epsilon * a).collect();
    let nl = Nonlinearity { eps2_a: &eps2_a };

    let mut v: Vec<f64> = grid.unknown_positions().map(|x| initial.value(x)).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(diverged("initial guess is not finite on the grid".into()));
    }
    let residual = |v: &[f64]| -> Option<(Vec<f64>, Vec<f64>)> {
        let s = nl.source(v)?;
        let mut f = op.apply(v, &zero_bc);
        for (fi, si) in f.iter_mut().zip(&s) {
            *fi -= si;
        }
        Some((f, s))
    };
    let (mut f, mut s) = residual(&v).ok_or(Error::OverflowInExp)?;
    let mut fnorm = sup(&f);
    let mut history = vec![fnorm];
    let symbolic = Factorized::symbolic(&op.matrix_with_diagonal(None)?)?;
    let mut iters = 0;
    let converged = |fnorm: f64, s: &[f64]| fnorm < opts.newton_tol * (1.0 + sup(s));
    while !converged(fnorm, &s) {
        if iters >= opts.max_newton_iter {
            return Err(diverged(format!("no convergence in {iters} steps, residual {fnorm:e}")));
        }
        let shift: Vec<f64> = s.iter().map(|x| -x).collect();
        let jac = Factorized::new(op.matrix_with_diagonal(Some(&shift))?, Some(&symbolic))?;
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let step = jac.solve(&rhs, 1e-8)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(a, d)| a + t * d).collect();
            if let Some((ft, st)) = residual(&trial) {
                let n = sup(&ft);
                if n < fnorm {
                    accepted = Some((trial, ft, st, n));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((nv, nf, ns, nn)) = accepted else {
            return Err(diverged(format!("residual did not decrease after {} halvings", opts.max_halvings)));
        };
        log::debug!("newton eps={epsilon} iter={} residual={nn:e} damping={t}", iters + 1);
        (v, f, s, fnorm) = (nv, nf, ns, nn);
        history.push(fnorm);
        iters += 1;
    }
    let field = GridField::new(grid.clone(), v, zero_bc);
    let mut report = summarize(green, z, epsilon, field, &s, opts)?;
    report.converged = true;
    report.residual_norm = fnorm;
    report.residual_history = history;
    report.newton_iters = iters;
    Ok(report)
}

fn summarize(
    green: &GreenEngine,
    z: &SingularSet,
    epsilon: f64,
    field: DiscreteField,
    source: &[f64],
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let grid = field.grid().clone();
    let w = grid.cell_weights();
    let total_mass = ksum(w.iter().zip(source).map(|(a, b)| a * b));
    let peaks = find_peaks(&grid, source);
    let radius = match opts.ball_radius {
        Some(r) => r,
        None => default_ball_radius(green.domain(), z, &peaks),
    };
    let ball_masses = if radius > 0.0 {
        peaks.iter().map(|&c| BallMass { center: c, radius, mass: ball_mass(&grid, &w, source, c, radius) }).collect()
    } else {
        Vec::new()
    };
    let u = field.unknowns();
    let min_spacing =
        grid.xs().windows(2).chain(grid.ys().windows(2)).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
    Ok(SolveReport {
        epsilon,
        grid_n: grid.xs().len(),
        num_unknowns: grid.num_unknowns(),
        min_spacing,
        converged: false,
        residual_norm: f64::NAN,
        residual_history: Vec::new(),
        newton_iters: 0,
        min_value: u.iter().copied().fold(f64::INFINITY, f64::min),
        max_value: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        total_mass,
        ball_masses,
        peaks,
        farfield_deviation: None,
        field,
    })
}

/// Largest radius keeping balls around the peaks disjoint, inside the
/// domain and clear of the sources (capped at 0.3 of the diameter).
pub fn default_ball_radius(domain: &DomainSpec, z: &SingularSet, centers: &[Point]) -> f64 {
    let mut reach = 0.3 * domain.diameter();
    for (k, &c) in centers.iter().enumerate() {
        reach = reach.min(domain.dist_to_boundary(c).unwrap_or(0.0));
        for &d in &centers[k + 1..] {
            reach = reach.min(0.5 * (c - d).norm());
        }
        for p in &z.points {
            reach = reach.min((c - p).norm());
        }
    }
    0.9 * reach
}

fn ball_mass(grid: &Grid, w: &[f64], source: &[f64], c: Point, r: f64) -> f64 {
    let r2 = r * r;
    grid.unknown_positions()
        .zip(w.iter().zip(source))
        .filter(|(x, _)| (x - c).norm_squared() < r2)
        .map(|(_, (a, b))| a * b)
        .collect::<KahanSum>()
        .value()
}

/// Local maxima of the nodal density above 1% of its maximum, refined by
/// a parabola through each axis' three nodes.
pub fn find_peaks(grid: &Grid, density: &[f64]) -> Vec<Point> {
    let top = density.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Vec::new();
    }
    let val = |t: Target| match t {
        Target::Unknown(i) => density[i as usize],
        Target::Dirichlet(_) => 0.0,
    };
    let mut peaks = Vec::new();
    for (k, &dk) in density.iter().enumerate() {
        if dk < 0.01 * top {
            continue;
        }
        let arms = grid.arms(k);
        if arms.iter().any(|a| val(a.target) >= dk) {
            continue;
        }
        let x = grid.unknown_position(k);
        let vertex = |f0: f64, fp: f64, fm: f64, hp: f64, hm: f64| {
            // log-density is nearly quadratic near the peak
            let (g0, gp, gm) = (f0.ln(), fp.max(1e-300).ln(), fm.max(1e-300).ln());
            let d1 = (gp - g0) / hp;
            let d2 = (g0 - gm) / hm;
            let curv = (d1 - d2) / (0.5 * (hp + hm));
            if curv < 0.0 {
                let slope = (d1 * hm + d2 * hp) / (hp + hm);
                (-slope / curv).clamp(-hm, hp)
            } else {
                0.0
            }
        };
        let dx = vertex(dk, val(arms[0].target), val(arms[1].target), arms[0].len, arms[1].len);
        let dy = vertex(dk, val(arms[2].target), val(arms[3].target), arms[2].len, arms[3].len);
        peaks.push(x + pt(dx, dy));
    }
    peaks.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    peaks
}

/// Fixed-point iteration `-Δ_h v_{k+1} = ε² a e^{v_k}` from `v = 0`; the
/// minimal solution for small data. Returns the field and the number of sweeps.
pub fn picard_solve(
    green: &GreenEngine,
    z: &SingularSet,
    epsilon: f64,
    grid: Arc<Grid>,
    tol: f64,
    max_iter: usize,
) -> Result<(DiscreteField, usize)> {
    let op = grid.assemble_neg_laplacian(false);
    let zero_bc = vec![0.0; grid.dirichlet_points().len()];
    let eps2_a: Vec<f64> = nodal_weight(green, z, &grid)?.into_iter().map(|a| epsilon * epsilon * a).collect();
    let nl = Nonlinearity { eps2_a: &eps2_a };
    let lap = Factorized::new(op.matrix_with_diagonal(None)?, None)?;
    let mut v = vec![0.0; grid.num_unknowns()];
    for it in 1..=max_iter {
        let s = nl.source(&v).ok_or(Error::OverflowInExp)?;
        let next = lap.solve(&s, 1e-10)?;
        let change = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if change < tol {
            return Ok((GridField::new(grid, v, zero_bc), it));
        }
    }
    Err(Error::SolverDiverged(format!("Picard iteration did not settle in {max_iter} sweeps")))
}

/// `‖-Δ_h v - ε² a e^v‖_∞` with the matrix-free stencil, independent of the
/// assembled operator used by the solver.
pub fn residual_certificate(green: &GreenEngine, z: &SingularSet, epsilon: f64, field: &DiscreteField) -> Result<f64> {
    let grid = field.grid();
    let lap = grid.apply_neg_laplacian5(field.unknowns(), field.dirichlet());
    let mut worst = 0.0f64;
    for (k, (x, l)) in grid.unknown_positions().zip(&lap).enumerate() {
        let a = match energy::weight_a(green, z, x) {
            Ok(a) => a,
            Err(Error::PointAtSource(_)) => 0.0,
            Err(e) => return Err(e),
        };
        worst = worst.max((l - epsilon * epsilon * a * field.unknowns()[k].exp()).abs());
    }
    Ok(worst)
}

/// Largest deviation of the nodal values from their images under the
/// reflections `x ↦ -x`, `y ↦ -y` and `x ↔ y` that map the grid to itself.
pub fn discrete_symmetry_defect(field: &DiscreteField) -> f64 {
    let grid = field.grid();
    let (xs, ys) = (grid.xs(), grid.ys());
    let (nx, ny) = (xs.len(), ys.len());
    let mirror = |a: &[f64]| a.iter().zip(a.iter().rev()).all(|(p, q)| (p + q).abs() < 1e-12);
    let swap = nx == ny && xs.iter().zip(ys).all(|(a, b)| (a - b).abs() < 1e-12);
    let mut worst = 0.0f64;
    for j in 0..ny {
        for i in 0..nx {
            let Some(v) = field.node_value(i, j) else { continue };
            let mut cmp = |o: Option<f64>| {
                if let Some(w) = o {
                    worst = worst.max((v - w).abs());
                }
            };
            if mirror(xs) {
                cmp(field.node_value(nx - 1 - i, j));
            }
            if mirror(ys) {
                cmp(field.node_value(i, ny - 1 - j));
            }
            if swap {
                cmp(field.node_value(j, i));
            }
        }
    }
    worst
}

/// Initial guess for the next `ε`: the previous solution with its bubbles
/// re-scaled, `v_prev - W(ε_prev) + W(ε_next)` with `W` the ansatz at the
/// current peaks.
pub struct ContinuationGuess<'a> {
    previous: &'a DiscreteField,
    old: ApproxSolution<'a>,
    new: ApproxSolution<'a>,
    same: bool,
}

impl<'a> ContinuationGuess<'a> {
    pub fn new(
        green: &'a GreenEngine,
        z: &SingularSet,
        previous: &'a DiscreteField,
        centers: &Configuration,
        eps_prev: f64,
        eps_next: f64,
        mode: ProjectionMode,
    ) -> Result<Self> {
        let old = ApproxSolution::new(green, z, centers, eps_prev, mode)?;
        let new = ApproxSolution::new(green, z, centers, eps_next, mode)?;
        Ok(Self { previous, old, new, same: eps_prev == eps_next })
    }
}

impl Field for ContinuationGuess<'_> {
    fn value(&self, x: Point) -> f64 {
        let base = self.previous.value(x);
        if self.same {
            return base;
        }
        base - self.old.value(x) + self.new.value(x)
    }

    fn gradient(&self, x: Point) -> Point {
        let base = Field::gradient(self.previous, x);
        if self.same {
            return base;
        }
        base - self.old.gradient(x) + self.new.gradient(x)
    }
}

/// Picks the peaks to re-center on: one per limiting point, nearest first;
/// falls back to `xi_star` when the match is ambiguous or inadmissible.
fn recenter(green: &GreenEngine, z: &SingularSet, peaks: &[Point], xi_star: &Configuration) -> Configuration {
    if peaks.len() != xi_star.len() {
        return xi_star.clone();
    }
    let mut out = Vec::with_capacity(peaks.len());
    for &x in xi_star.points() {
        let best = peaks.iter().copied().min_by(|a, b| (a - x).norm().total_cmp(&(b - x).norm())).unwrap();
        out.push(best);
    }
    let c = Configuration(out);
    if energy::check_admissible(green, z, &c).is_ok() && c.min_pair_distance() > 0.5 * xi_star.min_pair_distance() {
        c
    } else {
        xi_star.clone()
    }
}

/// Grid for one solve at `centers`: aims for spacing `εμ/resolution` at
/// the cores, relaxing the target by halves while the grading is too steep,
/// and refuses anything coarser than `εμ/8`.
pub fn stage_grid(
    green: &GreenEngine,
    z: &SingularSet,
    centers: &Configuration,
    epsilon: f64,
    grid_n: usize,
    opts: &SolverOptions,
) -> Result<Arc<Grid>> {
    let mus = mu_from_config(green, z, centers)?;
    let hard = required_spacing(epsilon, &mus, MIN_RESOLUTION);
    let mut res = opts.resolution.max(MIN_RESOLUTION);
    loop {
        let target = 0.9 * required_spacing(epsilon, &mus, res);
        match graded_grid(green.domain(), centers.points(), target, grid_n, opts.max_grading) {
            Ok(grid) => {
                check_resolution(&grid, centers.points(), hard)?;
                return Ok(Arc::new(grid));
            }
            Err(Error::GridTooCoarse { spacing, center, .. }) if res <= MIN_RESOLUTION => {
                return Err(Error::GridTooCoarse { spacing, required: hard, center });
            }
            Err(Error::GridTooCoarse { .. }) => res = (0.5 * res).max(MIN_RESOLUTION),
            Err(e) => return Err(e),
        }
    }
}

/// Solves along a decreasing list of `ε` (ratio at least 1/2 per step),
/// starting from the ansatz at `xi_star` and re-centering at the peaks.
pub fn continuation(
    green: &GreenEngine,
    z: &SingularSet,
    xi_star: &Configuration,
    epsilons: &[f64],
    grid_n: usize,
    mode: ProjectionMode,
    opts: &SolverOptions,
) -> Result<Vec<SolveReport>> {
    if epsilons.is_empty() || epsilons.windows(2).any(|w| !(w[1] < w[0] && w[1] >= 0.5 * w[0])) {
        return Err(Error::Config("epsilon list must decrease with ratio >= 1/2 per step".into()));
    }
    let mut reports: Vec<SolveReport> = Vec::with_capacity(epsilons.len());
    for (k, &eps) in epsilons.iter().enumerate() {
        let tag = |e: Error| match e {
            Error::SolverDiverged(reason) => Error::NewtonDiverged { epsilon: eps, reason },
            Error::OverflowInExp => Error::NewtonDiverged { epsilon: eps, reason: "exp overflow".into() },
            other => other,
        };
        let report = if k == 0 {
            let grid = stage_grid(green, z, xi_star, eps, grid_n, opts)?;
            let ansatz = ApproxSolution::new(green, z, xi_star, eps, mode)?;
            newton_solve(green, z, eps, &ansatz, grid, opts).map_err(tag)?
        } else {
            let prev = &reports[k - 1];
            let centers = recenter(green, z, &prev.peaks, xi_star);
            let grid = stage_grid(green, z, &centers, eps, grid_n, opts)?;
            let guess = ContinuationGuess::new(green, z, &prev.field, &centers, prev.epsilon, eps, mode)?;
            newton_solve(green, z, eps, &guess, grid, opts).map_err(tag)?
        };
        log::info!(
            "eps={eps}: {} Newton steps, residual {:.3e}, total mass {:.6}",
            report.newton_iters,
            report.residual_norm,
            report.total_mass
        );
        reports.push(report);
    }
    let radius = farfield_ball_radius(green.domain(), z, xi_star, opts);
    let points = farfield_points(green.domain(), z, xi_star, 3.0 * radius);
    if !points.is_empty() {
        for r in &mut reports {
            r.farfield_deviation = Some(farfield_check(green, z, r, xi_star, &points, radius)?);
        }
    }
    Ok(reports)
}

/// Ball radius behind the far-field test points: the mass-ball radius,
/// capped at `diam/20` so that the exclusion zones leave room.
pub fn farfield_ball_radius(
    domain: &DomainSpec,
    z: &SingularSet,
    xi_star: &Configuration,
    opts: &SolverOptions,
) -> f64 {
    let r = opts.ball_radius.unwrap_or_else(|| default_ball_radius(domain, z, xi_star.points()));
    r.min(0.05 * domain.diameter())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSummary {
    pub epsilon: f64,
    pub balls: Vec<BallMass>,
    pub complement: f64,
    pub total: f64,
}

/// Masses `ε² ∫_{B_r(ξ_j)} a e^v` per ball, the complement and the total,
/// all from the same nodal quadrature.
pub fn concentration_report(
    green: &GreenEngine,
    z: &SingularSet,
    report: &SolveReport,
    xi_star: &Configuration,
    radius: f64,
) -> Result<ConcentrationSummary> {
    let pts = xi_star.points();
    for (k, &c) in pts.iter().enumerate() {
        if green.domain().dist_to_boundary(c)? <= radius || pts[k + 1..].iter().any(|&d| (c - d).norm() <= 2.0 * radius)
        {
            return Err(Error::OverlappingBalls);
        }
    }
    let field = &report.field;
    let grid = field.grid();
    let w = grid.cell_weights();
    let eps2 = report.epsilon * report.epsilon;
    let mut balls = vec![KahanSum::new(); pts.len()];
    let mut complement = KahanSum::new();
    let mut total = KahanSum::new();
    for (k, x) in grid.unknown_positions().enumerate() {
        let a = match energy::weight_a(green, z, x) {
            Ok(a) => a,
            Err(Error::PointAtSource(_)) => 0.0,
            Err(e) => return Err(e),
        };
        let m = w[k] * eps2 * a * field.unknowns()[k].exp();
        total.add(m);
        match pts.iter().position(|&c| (x - c).norm() < radius) {
            Some(j) => balls[j].add(m),
            None => complement.add(m),
        }
    }
    Ok(ConcentrationSummary {
        epsilon: report.epsilon,
        balls: pts.iter().zip(&balls).map(|(&c, m)| BallMass { center: c, radius, mass: m.value() }).collect(),
        complement: complement.value(),
        total: total.value(),
    })
}

/// Polar lattice of interior points at least `min_dist` away from every
/// concentration point and source.
pub fn farfield_points(domain: &DomainSpec, z: &SingularSet, xi_star: &Configuration, min_dist: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for i in 1..10 {
        let s = i as f64 / 10.0;
        for k in 0..24 {
            let th = 2.0 * PI * k as f64 / 24.0;
            let x = s * domain.radius(th).0 * polar(th);
            if xi_star.points().iter().chain(&z.points).all(|c| (x - c).norm() >= min_dist) {
                out.push(x);
            }
        }
    }
    out
}

/// `max |u(x) - (-4π Σ α_p G(x,p) + 8π Σ_j G(x,ξ_j))|` over the test points,
/// with `u = v - 4π Σ α_p G(·,p)` rebuilt from the solved regular part.
pub fn farfield_check(
    green: &GreenEngine,
    z: &SingularSet,
    report: &SolveReport,
    xi_star: &Configuration,
    test_points: &[Point],
    ball_radius: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for &x in test_points {
        if xi_star.points().iter().chain(&z.points).any(|c| (x - c).norm() < 3.0 * ball_radius) {
            return Err(Error::TestPointTooClose(x));
        }
        let sources = 4.0
            * PI
            * z.iter().map(|(p, al)| Ok(al * green.green(x, p)?)).collect::<Result<Vec<f64>>>()?.iter().sum::<f64>();
        let bubbles = 8.0
            * PI
            * xi_star.points().iter().map(|&c| green.green(x, c)).collect::<Result<Vec<f64>>>()?.iter().sum::<f64>();
        let u = report.field.value(x) - sources;
        worst = worst.max((u - (bubbles - sources)).abs());
    }
    Ok(worst)
}
