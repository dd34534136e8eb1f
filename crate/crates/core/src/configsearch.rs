//! Admissibility of `(N, α)`, the cone/annulus class `K`, its initial
//! configuration, minimization over `K`, refinement to a critical point of
//! `Ψ`, and polygon collision diagnostics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::energy::{self, check_admissible, Configuration, SingularSet};
use crate::error::{Error, Result};
use crate::geometry::{polar, Point};
use crate::green::GreenEngine;

const CANDIDATE_ANGLES: usize = 64;
const ARC_SAMPLES: usize = 8;

/// Number of points one source can carry: the largest integer `< 1 + α`.
pub fn capacity(alpha: f64) -> usize {
    ((1.0 + alpha).ceil() - 1.0).max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAssignment {
    pub index: usize,
    pub point: Point,
    pub alpha: f64,
    /// `N_p`.
    pub count: usize,
    /// Cone axis `θ_p`; meaningful only when `count > 0`.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingPlan {
    pub n: usize,
    pub assignment: Vec<SourceAssignment>,
    pub delta: f64,
}

impl SplittingPlan {
    /// Source owning each global point index, in the order of `ξ⁰`.
    pub fn owners(&self) -> Vec<&SourceAssignment> {
        self.assignment.iter().flat_map(|a| std::iter::repeat_n(a, a.count)).collect()
    }
}

/// Splits `N = Σ N_p` with `N_p < 1 + α_p` and places disjoint cones.
pub fn validate(n: usize, z: &SingularSet, domain: &DomainSpec) -> Result<SplittingPlan> {
    if n == 0 {
        return Err(Error::InvalidConfiguration("N must be at least 1".into()));
    }
    for (i, &alpha) in z.weights.iter().enumerate() {
        let k = alpha.round();
        if (alpha - k).abs() < 1e-12 && k >= 1.0 && (k as usize) < n {
            return Err(Error::IntegerWeightObstruction { index: i, alpha, n });
        }
    }
    let caps: Vec<usize> = z.weights.iter().map(|&a| capacity(a)).collect();
    let total: usize = caps.iter().sum();
    if total < n {
        return Err(Error::NoSplitting { n, capacity: total });
    }
    // largest capacity first, ties by index
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| caps[b].cmp(&caps[a]).then(a.cmp(&b)));
    let mut counts = vec![0usize; z.len()];
    let mut left = n;
    for i in order {
        let take = caps[i].min(left);
        counts[i] = take;
        left -= take;
    }

    let mut sep = f64::INFINITY;
    for (i, p) in z.points.iter().enumerate() {
        sep = sep.min(domain.dist_to_boundary(*p)?);
        for q in &z.points[i + 1..] {
            sep = sep.min((p - q).norm() / 4.0);
        }
    }
    let mut delta = 0.1 * sep;
    let used: Vec<usize> = (0..z.len()).filter(|&i| counts[i] > 0).collect();
    for _ in 0..40 {
        if let Some(thetas) = place_cones(z, &used, delta, domain.diameter()) {
            let assignment = (0..z.len())
                .map(|i| SourceAssignment {
                    index: i,
                    point: z.points[i],
                    alpha: z.weights[i],
                    count: counts[i],
                    theta: used.iter().position(|&u| u == i).map_or(0.0, |k| thetas[k]),
                })
                .collect();
            return Ok(SplittingPlan { n, assignment, delta });
        }
        delta *= 0.5;
    }
    Err(Error::ConePlacement)
}

fn sector_polygon(p: Point, theta: f64, half: f64, len: f64) -> Vec<Point> {
    let mut v = vec![p];
    for k in 0..=ARC_SAMPLES {
        let t = theta - half + 2.0 * half * k as f64 / ARC_SAMPLES as f64;
        v.push(p + len * polar(t));
    }
    v
}

/// Separating-axis test for convex polygons.
fn convex_disjoint(a: &[Point], b: &[Point]) -> bool {
    for poly in [a, b] {
        for i in 0..poly.len() {
            let e = poly[(i + 1) % poly.len()] - poly[i];
            let axis = Point::new(-e.y, e.x);
            if axis.norm_squared() == 0.0 {
                continue;
            }
            let proj = |q: &[Point]| {
                q.iter()
                    .map(|v| v.dot(&axis))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
            };
            let (alo, ahi) = proj(a);
            let (blo, bhi) = proj(b);
            if ahi < blo || bhi < alo {
                return true;
            }
        }
    }
    false
}

fn place_cones(z: &SingularSet, used: &[usize], delta: f64, len: f64) -> Option<Vec<f64>> {
    let centroid =
        if z.is_empty() { Point::zeros() } else { z.points.iter().fold(Point::zeros(), |s, p| s + p) / z.len() as f64 };
    let step = 2.0 * PI / CANDIDATE_ANGLES as f64;
    let mut placed: Vec<Vec<Point>> = Vec::new();
    let mut thetas = Vec::new();
    for &i in used {
        let p = z.points[i];
        let away = p - centroid;
        let base = if away.norm() > 1e-12 { away.y.atan2(away.x) } else { 0.0 };
        let mut found = None;
        for k in 0..CANDIDATE_ANGLES {
            // 0, +1, -1, +2, -2, ...
            let m = k.div_ceil(2) as f64 * if k % 2 == 1 { 1.0 } else { -1.0 };
            let th = base + m * step;
            let poly = sector_polygon(p, th, delta, len);
            if placed.iter().all(|q| convex_disjoint(&poly, q)) {
                found = Some((th, poly));
                break;
            }
        }
        let (th, poly) = found?;
        thetas.push(th);
        placed.push(poly);
    }
    Some(thetas)
}

/// `ξ_j⁰ = p_r + (3/2)δ e^{i(θ_r + jδ/N)}`, `j = 1..N` in plan order.
pub fn initial_configuration(plan: &SplittingPlan) -> Configuration {
    let n = plan.n as f64;
    Configuration(
        plan.owners()
            .iter()
            .enumerate()
            .map(|(j, a)| a.point + 1.5 * plan.delta * polar(a.theta + (j + 1) as f64 * plan.delta / n))
            .collect(),
    )
}

/// Whether `Ψ` is invariant under rotations about the origin: unit disk
/// with every source at the center.
pub fn is_rotation_invariant(domain: &DomainSpec, z: &SingularSet) -> bool {
    domain.is_unit_disk() && z.points.iter().all(|p| p.norm() == 0.0)
}

/// For rotation-invariant data the critical points come in circles; picks
/// the representative with `ξ_1` on the positive x-axis. Returns `xi`
/// unchanged otherwise.
pub fn canonical_orientation(domain: &DomainSpec, z: &SingularSet, xi: &Configuration) -> Configuration {
    let Some(first) = xi.0.first().filter(|_| is_rotation_invariant(domain, z)) else {
        return xi.clone();
    };
    if first.norm() == 0.0 {
        return xi.clone();
    }
    let (s, c) = (-first.y.atan2(first.x)).sin_cos();
    let mut out: Vec<Point> = xi.0.iter().map(|p| Point::new(c * p.x - s * p.y, s * p.x + c * p.y)).collect();
    out[0].y = 0.0;
    Configuration(out)
}

/// Tolerances and seeds for the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub descent_tol: f64,
    pub descent_max_iter: usize,
    pub gradient_tol: f64,
    pub refine_max_iter: usize,
    /// Hessian finite-difference step as a fraction of `δ`.
    pub hessian_step: f64,
    pub starts: usize,
    pub seed: u64,
    /// Worker threads for the starts; results do not depend on it.
    pub jobs: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            descent_tol: 1e-8,
            descent_max_iter: 10_000,
            gradient_tol: 1e-7,
            refine_max_iter: 200,
            hessian_step: 1e-4,
            starts: 8,
            seed: 0,
            jobs: 1,
        }
    }
}

/// Separation floor `M⁻¹` used by default.
pub fn default_separation_floor(plan: &SplittingPlan) -> f64 {
    plan.delta / 100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimizeReport {
    pub xi: Configuration,
    pub psi: f64,
    pub psi_start: f64,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Range of `½ΣH(ξ_j,ξ_j)` along the descent path.
    pub robin_range: (f64, f64),
    /// Range of `Σ_p (α_p/2) Σ_j G(ξ_j,p)` along the descent path.
    pub source_range: (f64, f64),
}

fn project_k(x: &mut [Point], owners: &[&SourceAssignment], delta: f64, floor: f64) {
    let clamp = |x: &mut [Point]| {
        for (xj, a) in x.iter_mut().zip(owners) {
            let d = *xj - a.point;
            let r = d.norm();
            let dir = if r > 0.0 { d / r } else { polar(a.theta) };
            *xj = a.point + r.clamp(delta, 2.0 * delta) * dir;
        }
    };
    clamp(x);
    for _ in 0..10 {
        let mut moved = false;
        for j in 0..x.len() {
            for k in j + 1..x.len() {
                let d = x[j] - x[k];
                let r = d.norm();
                if r < floor {
                    let dir = if r > 0.0 { d / r } else { polar(owners[j].theta + PI / 2.0) };
                    let mid = 0.5 * (x[j] + x[k]);
                    x[j] = mid + 0.5 * floor * dir;
                    x[k] = mid - 0.5 * floor * dir;
                    moved = true;
                }
            }
        }
        clamp(x);
        if !moved {
            break;
        }
    }
}

/// Projected-gradient descent of `Ψ` over `K` from `start` (or `ξ⁰`).
pub fn minimize_in_k(
    plan: &SplittingPlan,
    z: &SingularSet,
    green: &GreenEngine,
    floor: f64,
    start: Option<&Configuration>,
    opts: &SearchOptions,
) -> Result<MinimizeReport> {
    let owners = plan.owners();
    let delta = plan.delta;
    let mut x: Vec<Point> = start.cloned().unwrap_or_else(|| initial_configuration(plan)).0;
    if x.len() != owners.len() {
        return Err(Error::InvalidConfiguration("start has the wrong number of points".into()));
    }
    project_k(&mut x, &owners, delta, floor);
    let eval = |x: &[Point]| energy::psi_terms(green, z, &Configuration(x.to_vec()));
    let (r0, s0, p0) = eval(&x)?;
    let mut f = r0 - s0 + p0;
    let psi_start = f;
    let mut robin_range = (r0, r0);
    let mut source_range = (s0, s0);
    let t_ref = 1e-4 * delta * delta;
    let mut t = delta * delta;
    let mut pg = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.descent_max_iter {
        let g = energy::grad_psi(green, z, &Configuration(x.clone()))?;
        let mut probe: Vec<Point> = x.iter().zip(&g).map(|(a, b)| a - t_ref * b).collect();
        project_k(&mut probe, &owners, delta, floor);
        pg = x.iter().zip(&probe).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt() / t_ref;
        if pg < opts.descent_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while t > 1e-30 * delta * delta {
            let mut trial: Vec<Point> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            project_k(&mut trial, &owners, delta, floor);
            let step2: f64 = x.iter().zip(&trial).map(|(a, b)| (a - b).norm_squared()).sum();
            let (r, s, p) = eval(&trial)?;
            let ft = r - s + p;
            if ft <= f - 1e-4 * step2 / t {
                accepted = step2 > 0.0;
                x = trial;
                f = ft;
                robin_range = (robin_range.0.min(r), robin_range.1.max(r));
                source_range = (source_range.0.min(s), source_range.1.max(s));
                t *= 1.5;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(MinimizeReport {
        xi: Configuration(x),
        psi: f,
        psi_start,
        projected_grad_norm: pg,
        iterations,
        converged,
        robin_range,
        source_range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    Converged,
    IterationLimit,
    /// `|∇Ψ|²` stopped decreasing above tolerance.
    SpuriousStall,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub xi_star: Configuration,
    pub psi_value: f64,
    pub grad_norm: f64,
    pub hessian_eigenvalues: Vec<f64>,
    /// `(n_plus, n_minus, n_zero)`.
    pub hessian_signature: (usize, usize, usize),
    pub classification: String,
    pub min_pair_distance: f64,
    pub min_source_distance: f64,
    pub min_boundary_distance: f64,
    pub iterations: usize,
    pub status: RefineStatus,
    pub converged: bool,
}

fn flatten(v: &[Point]) -> DVector<f64> {
    DVector::from_iterator(2 * v.len(), v.iter().flat_map(|p| [p.x, p.y]))
}

fn unflatten(v: &DVector<f64>) -> Vec<Point> {
    v.as_slice().chunks(2).map(|c| Point::new(c[0], c[1])).collect()
}

fn grad_flat(green: &GreenEngine, z: &SingularSet, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(flatten(&energy::grad_psi(green, z, &Configuration(unflatten(x)))?))
}

/// Central-difference Hessian of the analytic gradient, symmetrized.
pub fn fd_hessian(green: &GreenEngine, z: &SingularSet, xi: &Configuration, step: f64) -> Result<DMatrix<f64>> {
    let x = flatten(&xi.0);
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let col = (grad_flat(green, z, &xp)? - grad_flat(green, z, &xm)?) / (2.0 * step);
        h.set_column(i, &col);
    }
    Ok(0.5 * (&h + h.transpose()))
}

/// Signature `(n_plus, n_minus, n_zero)` with zero threshold `1e-6·max|λ|`.
pub fn signature(eigs: &[f64]) -> (usize, usize, usize) {
    let scale = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let thr = 1e-6 * scale;
    let plus = eigs.iter().filter(|&&v| v > thr).count();
    let minus = eigs.iter().filter(|&&v| v < -thr).count();
    (plus, minus, eigs.len() - plus - minus)
}

fn classify(sig: (usize, usize, usize)) -> &'static str {
    match sig {
        (_, 0, 0) => "minimum",
        (0, _, 0) => "maximum",
        (_, 0, _) => "degenerate minimum",
        (0, _, _) => "degenerate maximum",
        _ => "saddle",
    }
}

fn length_scale(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<f64> {
    let mut s = xi.min_pair_distance().min(xi.min_source_distance(z));
    for x in &xi.0 {
        s = s.min(green.domain().dist_to_boundary(*x)?);
    }
    Ok(s)
}

/// Levenberg–Marquardt on `∇Ψ = 0` from `start`. `delta` sets the Hessian
/// step; it defaults to the smallest separation length of `start`.
pub fn saddle_refine(
    start: &Configuration,
    z: &SingularSet,
    green: &GreenEngine,
    delta: Option<f64>,
    opts: &SearchOptions,
) -> Result<CriticalPointReport> {
    check_admissible(green, z, start)?;
    let scale = match delta {
        Some(d) => d,
        None => length_scale(green, z, start)?,
    };
    let step = opts.hessian_step * scale;
    let admissible = |x: &DVector<f64>| check_admissible(green, z, &Configuration(unflatten(x))).is_ok();
    let mut x = flatten(&start.0);
    let mut f = grad_flat(green, z, &x)?;
    let mut lambda = 0.0;
    let mut iterations = 0;
    let mut status = RefineStatus::IterationLimit;
    while iterations < opts.refine_max_iter {
        if f.norm() < opts.gradient_tol {
            status = RefineStatus::Converged;
            break;
        }
        iterations += 1;
        let h = fd_hessian(green, z, &Configuration(unflatten(&x)), step)?;
        let hh = &h * &h;
        let hmax = hh.diagonal().max().max(1e-300);
        if lambda == 0.0 {
            lambda = 1e-10 * hmax;
        }
        let rhs = -(&h * &f);
        let mut improved = false;
        while lambda < 1e12 * hmax {
            let a = &hh + DMatrix::identity(x.len(), x.len()) * lambda;
            let Some(s) = a.cholesky().map(|c| c.solve(&rhs)) else {
                lambda *= 4.0;
                continue;
            };
            let mut s = s;
            let mut halvings = 0;
            while !admissible(&(&x + &s)) {
                if halvings == 40 {
                    return Err(Error::EscapedDomain);
                }
                s *= 0.5;
                halvings += 1;
            }
            let xt = &x + &s;
            let ft = grad_flat(green, z, &xt)?;
            if ft.norm() < f.norm() {
                x = xt;
                f = ft;
                lambda = (lambda / 3.0).max(1e-14 * hmax);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            status = RefineStatus::SpuriousStall;
            break;
        }
    }
    let xi = Configuration(unflatten(&x));
    let h = fd_hessian(green, z, &xi, step)?;
    let mut eigs: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eigs.sort_by(f64::total_cmp);
    let sig = signature(&eigs);
    let mut min_b = f64::INFINITY;
    for p in &xi.0 {
        min_b = min_b.min(green.domain().dist_to_boundary(*p)?);
    }
    let floor = energy::membership_floor(green);
    let grad_norm = f.norm();
    let converged = status == RefineStatus::Converged
        && xi.min_pair_distance() > floor
        && xi.min_source_distance(z) > floor
        && min_b > floor;
    Ok(CriticalPointReport {
        psi_value: energy::psi(green, z, &xi)?,
        grad_norm,
        hessian_eigenvalues: eigs,
        hessian_signature: sig,
        classification: classify(sig).to_string(),
        min_pair_distance: xi.min_pair_distance(),
        min_source_distance: xi.min_source_distance(z),
        min_boundary_distance: min_b,
        xi_star: xi,
        iterations,
        status,
        converged,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiStartReport {
    pub plan: SplittingPlan,
    pub minimizations: Vec<MinimizeReport>,
    pub critical_points: Vec<CriticalPointReport>,
    /// Index of the selected critical point: the first converged start.
    pub selected: Option<usize>,
    /// Spread of `Ψ*` over converged starts.
    pub psi_spread: f64,
}

/// Seeded multi-start: `ξ⁰` plus `starts - 1` perturbations of radius `δ/4`,
/// each minimized over `K` and refined.
pub fn multi_start(
    plan: &SplittingPlan,
    z: &SingularSet,
    green: &GreenEngine,
    opts: &SearchOptions,
) -> Result<MultiStartReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let xi0 = initial_configuration(plan);
    let floor = default_separation_floor(plan);
    let starts: Vec<Configuration> = (0..opts.starts.max(1))
        .map(|s| {
            if s == 0 {
                return xi0.clone();
            }
            Configuration(
                xi0.0
                    .iter()
                    .map(|p| {
                        let r = 0.25 * plan.delta * rng.gen::<f64>().sqrt();
                        p + r * polar(2.0 * PI * rng.gen::<f64>())
                    })
                    .collect(),
            )
        })
        .collect();
    let run = |start: &Configuration| -> Result<(MinimizeReport, CriticalPointReport)> {
        let m = minimize_in_k(plan, z, green, floor, Some(start), opts)?;
        let c = saddle_refine(&m.xi, z, green, Some(plan.delta), opts)?;
        Ok((m, c))
    };
    // starts are claimed from a shared counter; results stay in start order
    let jobs = opts.jobs.clamp(1, starts.len());
    let results: Vec<Result<(MinimizeReport, CriticalPointReport)>> = if jobs == 1 {
        starts.iter().map(run).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<_>>>> = starts.iter().map(|_| Default::default()).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let s = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if s >= starts.len() {
                        break;
                    }
                    *slots[s].lock().expect("slot poisoned") = Some(run(&starts[s]));
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("slot poisoned").expect("every start ran")).collect()
    };
    let mut mins = Vec::with_capacity(results.len());
    let mut crits = Vec::with_capacity(results.len());
    for r in results {
        let (m, c) = r?;
        mins.push(m);
        crits.push(c);
    }
    let conv: Vec<f64> = crits.iter().filter(|c| c.converged).map(|c| c.psi_value).collect();
    let spread = if conv.is_empty() {
        f64::NAN
    } else {
        conv.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - conv.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    Ok(MultiStartReport {
        plan: plan.clone(),
        selected: crits.iter().position(|c| c.converged),
        minimizations: mins,
        critical_points: crits,
        psi_spread: spread,
    })
}

/// Coefficient of `log(1/ρ)` in `Ψ` along a regular `n`-gon shrinking onto a
/// source of weight `α`: `n(n - 1 - α)/(4π)`.
pub fn polygon_slope_coefficient(n_sides: usize, alpha: f64) -> f64 {
    let n = n_sides as f64;
    n * (n - 1.0 - alpha) / (4.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub rho: f64,
    pub psi: f64,
    pub grad_norm: f64,
    /// `ΔΨ/Δlog(1/ρ)` against the previous row.
    pub slope: Option<f64>,
}

/// Regular polygon `p + c + ρ e^{i(φ + 2πk/n)}` for each `ρ`.
pub fn polygon(center: Point, n_sides: usize, rho: f64, phase: f64) -> Configuration {
    Configuration((0..n_sides).map(|k| center + rho * polar(phase + 2.0 * PI * k as f64 / n_sides as f64)).collect())
}

pub fn collision_scan(
    green: &GreenEngine,
    z: &SingularSet,
    p_index: usize,
    n_sides: usize,
    rhos: &[f64],
    phase: f64,
    center_offset: Point,
) -> Result<Vec<ScanRow>> {
    let p = *z.points.get(p_index).ok_or_else(|| Error::InvalidConfiguration(format!("no source #{p_index}")))?;
    if n_sides == 0 {
        return Err(Error::InvalidConfiguration("polygon needs at least one vertex".into()));
    }
    let mut rows: Vec<ScanRow> = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let xi = polygon(p + center_offset, n_sides, rho, phase);
        let rep = energy::energy_report(green, z, &xi)?;
        let slope = rows.last().map(|prev| (rep.psi - prev.psi) / (prev.rho / rho).ln());
        rows.push(ScanRow { rho, psi: rep.psi, grad_norm: rep.grad_norm, slope });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RayFamilyReport {
    /// `(ρ, Ψ)` along the shrinking ray family.
    pub values: Vec<(f64, f64)>,
    pub sup: f64,
}

/// `Ψ` on `ξ_j = p_r + ρ e^{i(θ_r + jδ/N)}`, `ρ = (3/2)δ 2^{-n}`, `n ≤ levels`.
pub fn ray_family_bound(
    plan: &SplittingPlan,
    z: &SingularSet,
    green: &GreenEngine,
    levels: u32,
) -> Result<RayFamilyReport> {
    let owners = plan.owners();
    let n = plan.n as f64;
    let mut values = Vec::new();
    for l in 0..=levels {
        let rho = 1.5 * plan.delta * 0.5f64.powi(l as i32);
        let xi = Configuration(
            owners
                .iter()
                .enumerate()
                .map(|(j, a)| a.point + rho * polar(a.theta + (j + 1) as f64 * plan.delta / n))
                .collect(),
        );
        values.push((rho, energy::psi(green, z, &xi)?));
    }
    let sup = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(RayFamilyReport { values, sup })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sandwich {
    /// Sampled lower bound from the term groups of `Ψ` on `K` (pair term ≥ 0).
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

pub fn max_min_sandwich(
    plan: &SplittingPlan,
    z: &SingularSet,
    green: &GreenEngine,
    value: f64,
    levels: u32,
) -> Result<Sandwich> {
    let mut lower = 0.0;
    for a in plan.owners() {
        let mut hmin = f64::INFINITY;
        let mut src = vec![f64::NEG_INFINITY; z.len()];
        for i in 0..=8 {
            let r = plan.delta * (1.0 + i as f64 / 8.0);
            for k in 0..64 {
                let x = a.point + r * polar(2.0 * PI * k as f64 / 64.0);
                hmin = hmin.min(green.robin_regular(x, x)?);
                for (s, (p, _)) in src.iter_mut().zip(z.iter()) {
                    *s = s.max(green.green(x, p)?);
                }
            }
        }
        lower += 0.5 * hmin;
        for (s, alpha) in src.iter().zip(&z.weights) {
            lower -= 0.5 * alpha * s;
        }
    }
    let upper = ray_family_bound(plan, z, green, levels)?.sup;
    Ok(Sandwich { lower, value, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;

    #[test]
    fn canonical_orientation_preserves_psi() {
        let g = GreenEngine::closed_form_disk();
        let z = SingularSet::single(pt(0.0, 0.0), 1.5);
        let xi = Configuration(vec![pt(0.1, 0.5), pt(-0.3, -0.2)]);
        let c = canonical_orientation(g.domain(), &z, &xi);
        assert_eq!(c.0[0].y, 0.0);
        assert!(c.0[0].x > 0.0);
        let (a, b) = (energy::psi(&g, &z, &xi).unwrap(), energy::psi(&g, &z, &c).unwrap());
        assert!((a - b).abs() < 1e-12);
        let off = SingularSet::single(pt(0.2, 0.0), 1.5);
        assert_eq!(canonical_orientation(g.domain(), &off, &xi), xi);
    }

    fn disk() -> GreenEngine {
        GreenEngine::closed_form_disk()
    }

    #[test]
    fn worker_count_does_not_change_multi_start() {
        let g = disk();
        let z = SingularSet::single(pt(0.0, 0.0), 1.5);
        let plan = validate(2, &z, g.domain()).unwrap();
        let opts = SearchOptions { starts: 4, seed: 5, ..Default::default() };
        let one = multi_start(&plan, &z, &g, &opts).unwrap();
        let three = multi_start(&plan, &z, &g, &SearchOptions { jobs: 3, ..opts }).unwrap();
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&three).unwrap());
    }

    #[test]
    fn capacities() {
        assert_eq!(capacity(1.5), 2);
        assert_eq!(capacity(1.0), 1);
        assert_eq!(capacity(0.5), 1);
        assert_eq!(capacity(2.0), 2);
        assert_eq!(capacity(2.01), 3);
    }

    #[test]
    fn validate_examples() {
        let d = DomainSpec::unit_disk();
        let plan = validate(2, &SingularSet::single(pt(0.0, 0.0), 1.5), &d).unwrap();
        assert_eq!(plan.assignment[0].count, 2);
        assert!(matches!(
            validate(2, &SingularSet::single(pt(0.0, 0.0), 1.0), &d),
            Err(Error::IntegerWeightObstruction { index: 0, .. })
        ));
        let z = SingularSet::new(vec![pt(-0.4, 0.0), pt(0.4, 0.0)], vec![0.5, 0.5]).unwrap();
        let plan = validate(2, &z, &d).unwrap();
        assert_eq!(plan.assignment.iter().map(|a| a.count).collect::<Vec<_>>(), vec![1, 1]);
        assert!((plan.assignment[0].theta.cos() + 1.0).abs() < 1e-12);
        assert!(plan.assignment[1].theta.abs() < 1e-12);
        assert!(matches!(validate(3, &z, &d), Err(Error::NoSplitting { n: 3, capacity: 2 })));
        assert!(validate(0, &z, &d).is_err());
    }

    #[test]
    fn cone_invariants() {
        let d = DomainSpec::unit_disk();
        let z = SingularSet::new(vec![pt(-0.3, 0.0), pt(0.3, 0.0), pt(0.0, 0.4)], vec![0.5, 0.7, 1.2]).unwrap();
        let plan = validate(4, &z, &d).unwrap();
        for a in &plan.assignment {
            assert!(d.dist_to_boundary(a.point).unwrap() > 2.0 * plan.delta);
            for b in &plan.assignment {
                if a.index < b.index {
                    assert!((a.point - b.point).norm() > 4.0 * plan.delta);
                    let pa = sector_polygon(a.point, a.theta, plan.delta, 2.0);
                    let pb = sector_polygon(b.point, b.theta, plan.delta, 2.0);
                    assert!(convex_disjoint(&pa, &pb));
                }
            }
        }
    }

    #[test]
    fn initial_configuration_example() {
        let plan = SplittingPlan {
            n: 2,
            delta: 0.2,
            assignment: vec![SourceAssignment { index: 0, point: pt(0.0, 0.0), alpha: 1.5, count: 2, theta: 0.0 }],
        };
        let xi = initial_configuration(&plan);
        assert!((xi.0[0] - 0.3 * polar(0.1)).norm() < 1e-15);
        assert!((xi.0[1] - 0.3 * polar(0.2)).norm() < 1e-15);
    }

    #[test]
    fn minimize_single_point_goes_to_inner_wall() {
        // Ψ(r) = (1/4π)log(1-r²) - (α/4π)log(1/r) increases on (δ, 2δ)
        let g = disk();
        let z = SingularSet::single(pt(0.0, 0.0), 0.5);
        let plan = validate(1, &z, g.domain()).unwrap();
        let opts = SearchOptions::default();
        let m = minimize_in_k(&plan, &z, &g, default_separation_floor(&plan), None, &opts).unwrap();
        assert!(m.converged);
        assert!(m.psi <= m.psi_start);
        let oracle = (0..=1000)
            .map(|i| plan.delta * (1.0 + i as f64 / 1000.0))
            .map(|r| (1.0 - r * r).ln() / (4.0 * PI) - 0.5 / (4.0 * PI) * (1.0 / r).ln())
            .fold(f64::INFINITY, f64::min);
        assert!((m.psi - oracle).abs() < 1e-9);
        assert!((m.xi.0[0].norm() - plan.delta).abs() < 1e-12);
    }

    #[test]
    fn refine_center_is_robin_maximum() {
        let g = disk();
        let z = SingularSet::empty();
        let rep = saddle_refine(&Configuration(vec![pt(0.1, 0.1)]), &z, &g, None, &SearchOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.xi_star.0[0].norm() < 1e-6);
        assert!(rep.psi_value.abs() < 1e-12);
        assert_eq!(rep.hessian_signature, (0, 2, 0));
    }

    #[test]
    fn refine_antipodal_pair() {
        let g = disk();
        let z = SingularSet::single(pt(0.0, 0.0), 1.5);
        let opts = SearchOptions::default();
        let plan = validate(2, &z, g.domain()).unwrap();
        let rep = multi_start(&plan, &z, &g, &opts).unwrap();
        let r_star = (0.5f64 / 4.5).powf(0.25);
        for c in &rep.critical_points {
            assert!(c.converged, "{c:?}");
            assert!(c.grad_norm < 1e-7);
            for p in &c.xi_star.0 {
                assert!((p.norm() - r_star).abs() < 1e-5);
            }
            assert!((c.xi_star.0[0] + c.xi_star.0[1]).norm() < 1e-5);
            assert_eq!(c.hessian_signature.2, 1);
        }
        assert!(rep.psi_spread < 1e-10);
        let swapped = Configuration(vec![rep.critical_points[0].xi_star.0[1], rep.critical_points[0].xi_star.0[0]]);
        let again = saddle_refine(&swapped, &z, &g, Some(plan.delta), &opts).unwrap();
        assert!((again.psi_value - rep.critical_points[0].psi_value).abs() < 1e-8);
    }

    #[test]
    fn polygon_slopes() {
        let g = disk();
        for (alpha, n_sides) in [(1.0, 2usize), (2.0, 3), (1.5, 2), (2.5, 3)] {
            let z = SingularSet::single(pt(0.0, 0.0), alpha);
            let rhos: Vec<f64> = (0..14).map(|k| 0.01 * 0.5f64.powi(k)).collect();
            let rows = collision_scan(&g, &z, 0, n_sides, &rhos, 0.3, Point::zeros()).unwrap();
            let slope = rows.last().unwrap().slope.unwrap();
            let want = polygon_slope_coefficient(n_sides, alpha);
            assert!((slope - want).abs() < 1e-4, "{alpha} {n_sides}: {slope} vs {want}");
        }
    }

    #[test]
    fn ray_family_bounded_and_sandwich() {
        let g = disk();
        let z = SingularSet::single(pt(0.0, 0.0), 1.5);
        let plan = validate(2, &z, g.domain()).unwrap();
        let rep = ray_family_bound(&plan, &z, &g, 20).unwrap();
        assert!(rep.values.windows(2).all(|w| w[1].1 < w[0].1));
        let m = minimize_in_k(&plan, &z, &g, default_separation_floor(&plan), None, &SearchOptions::default()).unwrap();
        let s = max_min_sandwich(&plan, &z, &g, m.psi, 20).unwrap();
        assert!(s.lower <= s.value && s.value <= s.upper, "{s:?}");
    }

    #[test]
    fn wall_blow_up() {
        // doubling 1/floor raises Ψ by (1/2π)log 2 for a pair at the floor
        let g = disk();
        let z = SingularSet::single(pt(0.0, 0.0), 1.5);
        let mut prev = None;
        for k in 0..10 {
            let floor = 1e-3 * 0.5f64.powi(k);
            let xi = Configuration(vec![pt(0.15, 0.0), pt(0.15, floor)]);
            let v = energy::psi(&g, &z, &xi).unwrap();
            if let Some(p) = prev {
                assert!(v - p >= 2f64.ln() / (2.0 * PI) - 1e-3);
            }
            prev = Some(v);
        }
    }
}
