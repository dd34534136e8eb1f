//! Bubble profiles, the `μ_j` selection rule, projected bubbles, the
//! approximate solution `Σ_j P U_j`, the energy `I_ε` and the check of its
//! asymptotic expansion.

use std::cell::Cell;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::energy::{self, check_admissible, Configuration, SingularSet};
use crate::error::{Error, Result};
use crate::geometry::{KahanSum, Point};
use crate::green::{GreenEngine, HarmonicField};
use crate::grid::GridField;
use crate::quadrature::{Core, PeakedQuadrature, QuadratureOptions};

/// A scalar field with a gradient, evaluable at interior points.
pub trait Field: Sync {
    fn value(&self, x: Point) -> f64;
    fn gradient(&self, x: Point) -> Point;
}

impl Field for GridField {
    fn value(&self, x: Point) -> f64 {
        GridField::value(self, x)
    }

    fn gradient(&self, x: Point) -> Point {
        GridField::gradient(self, x, 0.25 * self.grid().local_spacing(x))
    }
}

/// The identically zero field.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl Field for ZeroField {
    fn value(&self, _: Point) -> f64 {
        0.0
    }

    fn gradient(&self, _: Point) -> Point {
        Point::zeros()
    }
}

/// `ω_μ(x) = log(8μ² / (μ² + |x|²)²)`, an entire solution of `-Δω = e^ω`.
pub fn omega_mu(mu: f64, x: Point) -> f64 {
    (8.0 * mu * mu).ln() - 2.0 * (mu * mu + x.norm_squared()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleParams {
    pub xi: Point,
    pub mu: f64,
    pub epsilon: f64,
}

impl BubbleParams {
    pub fn new(xi: Point, mu: f64, epsilon: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite() && epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfiguration(format!("need mu > 0 and epsilon > 0, got {mu}, {epsilon}")));
        }
        Ok(Self { xi, mu, epsilon })
    }

    /// Core width `εμ`.
    pub fn width(&self) -> f64 {
        self.epsilon * self.mu
    }

    /// `U(x) = log(8μ² / ((μ²ε² + |x - ξ|²)² a(ξ)))`.
    pub fn profile(&self, x: Point, log_a_xi: f64) -> f64 {
        let c2 = self.width().powi(2);
        (8.0 * self.mu * self.mu).ln() - 2.0 * (c2 + (x - self.xi).norm_squared()).ln() - log_a_xi
    }

    pub fn profile_gradient(&self, x: Point) -> Point {
        let d = x - self.xi;
        -4.0 * d / (self.width().powi(2) + d.norm_squared())
    }
}

/// `log 8μ_j² = log a(ξ_j) + 8πH(ξ_j,ξ_j) + 8πΣ_{k≠j} G(ξ_j,ξ_k)`.
pub fn mu_from_config(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<Vec<f64>> {
    check_admissible(green, z, xi)?;
    xi.0.iter()
        .enumerate()
        .map(|(j, &x)| {
            let mut acc = KahanSum::new();
            acc.add(energy::log_weight_a(green, z, x)?);
            acc.add(8.0 * PI * green.robin_regular(x, x)?);
            for (k, &y) in xi.0.iter().enumerate() {
                if k != j {
                    acc.add(8.0 * PI * green.green(x, y)?);
                }
            }
            Ok((acc.value().exp() / 8.0).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// Harmonic correction solved so that the trace vanishes.
    #[default]
    Exact,
    /// `U + 8πH(·,ξ) - log(8μ²/a(ξ))`, with an `O(ε²)` boundary trace.
    FirstOrder,
}

/// `P_Ω U` for one bubble.
#[derive(Debug, Clone)]
pub struct ProjectedBubble<'a> {
    green: &'a GreenEngine,
    params: BubbleParams,
    log_a_xi: f64,
    correction: Option<HarmonicField>,
}

impl<'a> ProjectedBubble<'a> {
    pub fn params(&self) -> &BubbleParams {
        &self.params
    }

    pub fn log_a_xi(&self) -> f64 {
        self.log_a_xi
    }

    /// Trace of the first-order projection on the boundary,
    /// `-2 log(1 + μ²ε²/|b - ξ|²)`, using the exact boundary values of `H`.
    pub fn first_order_trace(params: &BubbleParams, b: Point) -> f64 {
        -2.0 * (params.width().powi(2) / (b - params.xi).norm_squared()).ln_1p()
    }

    /// Difference between the exact and first-order projections.
    pub fn correction(&self) -> Option<&HarmonicField> {
        self.correction.as_ref()
    }
}

impl Field for ProjectedBubble<'_> {
    fn value(&self, x: Point) -> f64 {
        // U - log(8μ²/a(ξ)) collapses to -2 log(μ²ε² + |x - ξ|²)
        let c2 = self.params.width().powi(2);
        let base = -2.0 * (c2 + (x - self.params.xi).norm_squared()).ln()
            + 8.0 * PI * self.green.robin_regular(x, self.params.xi).unwrap_or(f64::NAN);
        base + self.correction.as_ref().map_or(0.0, |c| c.value(x))
    }

    fn gradient(&self, x: Point) -> Point {
        let g = self.params.profile_gradient(x)
            + 8.0 * PI * self.green.grad_x_robin(x, self.params.xi).unwrap_or(Point::repeat(f64::NAN));
        g + self.correction.as_ref().map_or(Point::zeros(), |c| c.gradient(x))
    }
}

pub fn projected_bubble<'a>(
    green: &'a GreenEngine,
    z: &SingularSet,
    b: BubbleParams,
    mode: ProjectionMode,
) -> Result<ProjectedBubble<'a>> {
    check_admissible(green, z, &Configuration(vec![b.xi]))?;
    let log_a_xi = energy::log_weight_a(green, z, b.xi)?;
    let correction = match mode {
        ProjectionMode::FirstOrder => None,
        ProjectionMode::Exact => {
            Some(green.harmonic_extension(&|p: Point| -ProjectedBubble::first_order_trace(&b, p))?)
        }
    };
    Ok(ProjectedBubble { green, params: b, log_a_xi, correction })
}

/// `v₀ = Σ_j P_Ω U_j`.
#[derive(Debug, Clone)]
pub struct ApproxSolution<'a> {
    green: &'a GreenEngine,
    z: SingularSet,
    bubbles: Vec<ProjectedBubble<'a>>,
    mode: ProjectionMode,
    epsilon: f64,
}

impl<'a> ApproxSolution<'a> {
    /// Bubbles at `xi` with `μ_j` from the selection rule.
    pub fn new(
        green: &'a GreenEngine,
        z: &SingularSet,
        xi: &Configuration,
        epsilon: f64,
        mode: ProjectionMode,
    ) -> Result<Self> {
        let mus = mu_from_config(green, z, xi)?;
        let params: Vec<BubbleParams> =
            xi.0.iter().zip(&mus).map(|(&x, &mu)| BubbleParams::new(x, mu, epsilon)).collect::<Result<_>>()?;
        Self::from_params(green, z, &params, mode)
    }

    pub fn from_params(
        green: &'a GreenEngine,
        z: &SingularSet,
        params: &[BubbleParams],
        mode: ProjectionMode,
    ) -> Result<Self> {
        let epsilon = params.first().map_or(0.0, |p| p.epsilon);
        let bubbles = params.iter().map(|&b| projected_bubble(green, z, b, mode)).collect::<Result<_>>()?;
        Ok(Self { green, z: z.clone(), bubbles, mode, epsilon })
    }

    pub fn bubbles(&self) -> &[ProjectedBubble<'a>] {
        &self.bubbles
    }

    pub fn params(&self) -> Vec<BubbleParams> {
        self.bubbles.iter().map(|b| b.params).collect()
    }

    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn singular_set(&self) -> &SingularSet {
        &self.z
    }

    /// Quadrature cores: bubble centers at width `εμ` and the sources.
    pub fn cores(&self) -> Vec<Core> {
        core_list(self.green, &self.z, &self.params())
    }
}

impl Field for ApproxSolution<'_> {
    fn value(&self, x: Point) -> f64 {
        self.bubbles.iter().map(|b| b.value(x)).sum()
    }

    fn gradient(&self, x: Point) -> Point {
        self.bubbles.iter().map(|b| b.gradient(x)).sum()
    }
}

fn core_list(green: &GreenEngine, z: &SingularSet, params: &[BubbleParams]) -> Vec<Core> {
    let mut cores: Vec<Core> = params.iter().map(|b| Core { center: b.xi, scale: b.width() }).collect();
    for p in &z.points {
        let d = green.domain().dist_to_boundary(*p).unwrap_or(1.0);
        cores.push(Core { center: *p, scale: 1e-3 * d });
    }
    cores
}

/// `I_ε(v) = ½∫|∇v|² - ε²∫ a e^v` and its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyValue {
    pub value: f64,
    pub dirichlet: f64,
    pub potential: f64,
}

/// `I_ε` of an analytic field, with core-resolving quadrature around `cores`.
pub fn energy_i(
    green: &GreenEngine,
    z: &SingularSet,
    field: &dyn Field,
    epsilon: f64,
    cores: &[Core],
    opts: QuadratureOptions,
) -> Result<EnergyValue> {
    let quad = PeakedQuadrature::new(green.domain(), cores, opts);
    let overflow = std::sync::atomic::AtomicBool::new(false);
    let [dir, pot] = quad.integrate_many(|x| {
        let g = field.gradient(x);
        let a_ev = match energy::log_weight_a(green, z, x) {
            Ok(la) => (la + field.value(x)).exp(),
            Err(_) => 0.0,
        };
        if !a_ev.is_finite() {
            overflow.store(true, std::sync::atomic::Ordering::Relaxed);
        }
        [0.5 * g.norm_squared(), a_ev]
    });
    if overflow.into_inner() || !dir.is_finite() || !pot.is_finite() {
        return Err(Error::QuadratureOverflow);
    }
    let potential = epsilon * epsilon * pot;
    Ok(EnergyValue { value: dir - potential, dirichlet: dir, potential })
}

/// `I_ε` of the approximate solution.
pub fn energy_i_ansatz(approx: &ApproxSolution<'_>, opts: QuadratureOptions) -> Result<EnergyValue> {
    energy_i(approx.green, &approx.z, approx, approx.epsilon, &approx.cores(), opts)
}

/// [`energy_i_ansatz`] with the quadrature refined until two successive
/// values agree to a relative tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedEnergy {
    pub energy: EnergyValue,
    /// `|I_k - I_{k-1}| / max(1, |I_k|)` for the last refinement.
    pub relative_change: f64,
    pub refinements: usize,
    pub converged: bool,
}

/// Starts at a quarter of the default resolution and doubles at most
/// `max_refinements` times.
pub fn energy_i_refined(approx: &ApproxSolution<'_>, tol: f64, max_refinements: usize) -> Result<RefinedEnergy> {
    let d = QuadratureOptions::default();
    let mut opts = QuadratureOptions {
        core_angles: d.core_angles / 4,
        global_angles: d.global_angles / 4,
        global_panels: d.global_panels / 4,
    };
    let mut prev = energy_i_ansatz(approx, opts)?;
    let mut change = f64::INFINITY;
    for k in 1..=max_refinements.max(1) {
        opts = opts.refined();
        let e = energy_i_ansatz(approx, opts)?;
        change = (e.value - prev.value).abs() / e.value.abs().max(1.0);
        prev = e;
        if change <= tol {
            return Ok(RefinedEnergy { energy: e, relative_change: change, refinements: k, converged: true });
        }
    }
    Ok(RefinedEnergy { energy: prev, relative_change: change, refinements: max_refinements.max(1), converged: false })
}

/// `I_ε` of a grid field by nodal (midpoint) quadrature with cut-cell weights
/// and arm-based second-order gradients.
pub fn energy_i_grid(green: &GreenEngine, z: &SingularSet, field: &GridField, epsilon: f64) -> Result<EnergyValue> {
    let grid = field.grid();
    let w = grid.cell_weights();
    let grads = field.nodal_gradients();
    let mut dir = KahanSum::new();
    let mut pot = KahanSum::new();
    for (k, (&wk, g)) in w.iter().zip(&grads).enumerate() {
        let x = grid.unknown_position(k);
        dir.add(0.5 * wk * g.norm_squared());
        if let Ok(la) = energy::log_weight_a(green, z, x) {
            let e = (la + field.unknowns()[k]).exp();
            if !e.is_finite() {
                return Err(Error::QuadratureOverflow);
            }
            pot.add(wk * e);
        }
    }
    let potential = epsilon * epsilon * pot.value();
    Ok(EnergyValue { value: dir.value() - potential, dirichlet: dir.value(), potential })
}

/// `ε² ∫_Ω a(ξ) e^U` for one bubble.
pub fn bubble_mass(green: &GreenEngine, b: &BubbleParams, opts: QuadratureOptions) -> Result<f64> {
    let quad = PeakedQuadrature::new(green.domain(), &[Core { center: b.xi, scale: b.width() }], opts);
    // a(ξ) e^U does not depend on a(ξ); pass log a(ξ) = 0
    Ok(b.epsilon * b.epsilon * quad.integrate(|x| b.profile(x, 0.0).exp()))
}

/// `-16Nπ + 8Nπ log 8 - 16Nπ log ε + 4πΨ`.
pub fn expansion_prediction(n: usize, epsilon: f64, psi: f64) -> f64 {
    let n = n as f64;
    -16.0 * n * PI + 8.0 * n * PI * 8f64.ln() - 16.0 * n * PI * epsilon.ln() + 4.0 * PI * psi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub epsilon: f64,
    pub energy: f64,
    pub prediction: f64,
    pub remainder: f64,
    pub remainder_over_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTable {
    pub n: usize,
    pub psi: f64,
    pub rows: Vec<ExpansionRow>,
    /// Least-squares fit `I ≈ constant + slope·log(1/ε)`.
    pub fitted_slope: f64,
    pub fitted_constant: f64,
}

impl ExpansionTable {
    pub fn remainders_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].remainder.abs() < w[0].remainder.abs())
    }
}

/// Least-squares line `y = c0 + c1 t`.
pub fn fit_line(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let stt: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    let c1 = sty / stt;
    (ym - c1 * tm, c1)
}

/// `I_ε(Σ P U)` against its predicted expansion over a decreasing list of `ε`.
pub fn expansion_check(
    green: &GreenEngine,
    z: &SingularSet,
    xi: &Configuration,
    epsilons: &[f64],
    mode: ProjectionMode,
    opts: QuadratureOptions,
) -> Result<ExpansionTable> {
    if epsilons.len() < 2 || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("expansion check needs at least two decreasing epsilons".into()));
    }
    let psi = energy::psi(green, z, xi)?;
    let n = xi.len();
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let approx = ApproxSolution::new(green, z, xi, eps, mode)?;
        let e = energy_i_ansatz(&approx, opts)?.value;
        let pred = expansion_prediction(n, eps, psi);
        rows.push(ExpansionRow {
            epsilon: eps,
            energy: e,
            prediction: pred,
            remainder: e - pred,
            remainder_over_epsilon: (e - pred) / eps,
        });
    }
    let t: Vec<f64> = rows.iter().map(|r| -r.epsilon.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.energy).collect();
    let (c0, c1) = fit_line(&t, &y);
    Ok(ExpansionTable { n, psi, rows, fitted_slope: c1, fitted_constant: c0 })
}

/// Coefficient of `Ψ` in the fitted constants of several tables: regresses
/// `constant - N(-16π + 8π log 8)` on `Ψ`. Returns `(coefficient, intercept)`.
pub fn fit_psi_coefficient(tables: &[ExpansionTable]) -> (f64, f64) {
    let t: Vec<f64> = tables.iter().map(|t| t.psi).collect();
    let y: Vec<f64> =
        tables.iter().map(|t| t.fitted_constant - t.n as f64 * (-16.0 * PI + 8.0 * PI * 8f64.ln())).collect();
    let (c0, c1) = fit_line(&t, &y);
    (c1, c0)
}

/// Max of `|v|` over `m` boundary samples.
pub fn boundary_trace_max(field: &dyn Field, green: &GreenEngine, m: usize) -> f64 {
    let dom = green.domain();
    let worst = Cell::new(0.0f64);
    for i in 0..m {
        let th = 2.0 * PI * i as f64 / m as f64;
        // evaluate just inside: the field accessors are defined on Ω
        let b = dom.boundary_point(th);
        let x = b + 1e-12 * dom.boundary_inward_normal(th);
        worst.set(worst.get().max(field.value(x).abs()));
    }
    worst.get()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;
    use crate::quadrature::adaptive_half_line;

    #[test]
    fn omega_examples() {
        let mu = 0.7;
        assert!((omega_mu(mu, Point::zeros()) - (8.0 / (mu * mu)).ln()).abs() < 1e-14);
        let mass = adaptive_half_line(&|r: f64| omega_mu(mu, pt(r, 0.0)).exp() * 2.0 * PI * r, 1e-12);
        assert!((mass - 8.0 * PI).abs() < 1e-8);
        let x = pt(0.3, -0.2);
        let h = 1e-4;
        let lap = (omega_mu(mu, x + pt(h, 0.0))
            + omega_mu(mu, x - pt(h, 0.0))
            + omega_mu(mu, x + pt(0.0, h))
            + omega_mu(mu, x - pt(0.0, h))
            - 4.0 * omega_mu(mu, x))
            / (h * h);
        assert!((-lap / omega_mu(mu, x).exp() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mu_examples() {
        let g = GreenEngine::closed_form_disk();
        let mu = mu_from_config(&g, &SingularSet::empty(), &Configuration(vec![Point::zeros()])).unwrap();
        assert!((mu[0] - 1.0 / 8f64.sqrt()).abs() < 1e-15);
        let z = SingularSet::single(Point::zeros(), 1.0);
        let r: f64 = 0.4;
        let mu = mu_from_config(&g, &z, &Configuration(vec![pt(0.0, r)])).unwrap();
        let want = 2.0 * r.ln() + 4.0 * (1.0 - r * r).ln();
        assert!(((8.0 * mu[0] * mu[0]).ln() - want).abs() < 1e-13);
        let xi = Configuration(vec![pt(0.3, 0.1), pt(-0.2, 0.4), pt(0.1, -0.5)]);
        let xr = Configuration(vec![xi.0[0], xi.0[2], xi.0[1]]);
        let (a, b) = (mu_from_config(&g, &z, &xi).unwrap(), mu_from_config(&g, &z, &xr).unwrap());
        assert!((a[0] - b[0]).abs() < 1e-15 * a[0]);
    }

    #[test]
    fn bubble_solves_liouville() {
        let b = BubbleParams::new(pt(0.2, 0.1), 0.3, 0.1).unwrap();
        let la = -0.7;
        let x = pt(0.25, 0.12);
        let h = 1e-4;
        let u = |p: Point| b.profile(p, la);
        let lap =
            (u(x + pt(h, 0.0)) + u(x - pt(h, 0.0)) + u(x + pt(0.0, h)) + u(x - pt(0.0, h)) - 4.0 * u(x)) / (h * h);
        let rhs = la.exp() * b.epsilon.powi(2) * u(x).exp();
        assert!((-lap / rhs - 1.0).abs() < 1e-5);
    }

    #[test]
    fn exact_projection_has_zero_trace() {
        let g = GreenEngine::closed_form_disk();
        let b = BubbleParams::new(pt(0.3, -0.2), 0.35, 0.1).unwrap();
        let pb = projected_bubble(&g, &SingularSet::empty(), b, ProjectionMode::Exact).unwrap();
        assert!(boundary_trace_max(&pb, &g, 720) < 1e-8);
        let fo = projected_bubble(&g, &SingularSet::empty(), b, ProjectionMode::FirstOrder).unwrap();
        assert!(boundary_trace_max(&fo, &g, 720) > 1e-4);
    }

    #[test]
    fn projection_gap_is_second_order() {
        let g = GreenEngine::closed_form_disk();
        let z = SingularSet::empty();
        let xi = pt(0.3, -0.2);
        let samples: Vec<Point> =
            (0..50).map(|k| 0.9 * crate::geometry::polar(k as f64 * 0.41) * (k as f64 / 50.0)).collect();
        let gap = |eps: f64| {
            let b = BubbleParams::new(xi, 0.35, eps).unwrap();
            let e = projected_bubble(&g, &z, b, ProjectionMode::Exact).unwrap();
            let f = projected_bubble(&g, &z, b, ProjectionMode::FirstOrder).unwrap();
            let far = samples
                .iter()
                .filter(|x| (*x - xi).norm() >= 0.05)
                .map(|&x| (e.value(x) - 8.0 * PI * g.green(x, xi).unwrap()).abs())
                .fold(0.0, f64::max);
            (samples.iter().map(|&x| (e.value(x) - f.value(x)).abs()).fold(0.0, f64::max), far)
        };
        let (g1, f1) = gap(0.1);
        let (g2, f2) = gap(0.05);
        assert!(((g1 / g2) / 4.0 - 1.0).abs() < 0.2, "{g1} {g2}");
        assert!(((f1 / f2) / 4.0 - 1.0).abs() < 0.2, "{f1} {f2}");
    }

    #[test]
    fn zero_field_energy() {
        let g = GreenEngine::closed_form_disk();
        let e = energy_i(&g, &SingularSet::empty(), &ZeroField, 0.1, &[], QuadratureOptions::default()).unwrap();
        assert!((e.value / (-0.01 * PI) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn refined_energy_converges() {
        let g = GreenEngine::closed_form_disk();
        let z = SingularSet::empty();
        let xi = Configuration(vec![pt(0.3, 0.1)]);
        let approx = ApproxSolution::new(&g, &z, &xi, 0.05, ProjectionMode::Exact).unwrap();
        let r = energy_i_refined(&approx, 1e-8, 3).unwrap();
        assert!(r.converged, "{r:?}");
        let reference = energy_i_ansatz(&approx, QuadratureOptions::default()).unwrap().value;
        assert!((r.energy.value - reference).abs() < 1e-7 * reference.abs());
    }

    #[test]
    fn single_bubble_mass() {
        let g = GreenEngine::closed_form_disk();
        let b = BubbleParams::new(pt(0.2, 0.3), 1.0 / 8f64.sqrt(), 0.01).unwrap();
        let m = bubble_mass(&g, &b, QuadratureOptions::default()).unwrap();
        assert!((m / (8.0 * PI) - 1.0).abs() < 1e-3);
    }
}
