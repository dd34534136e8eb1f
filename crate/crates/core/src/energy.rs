//! Singular weight `a(x)`, the renormalized energy `Ψ`, the constraint
//! functional `Φ` and the per-point gradient of `Ψ`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KahanSum, Point};
use crate::green::GreenEngine;

/// Dirac sources `p` with weights `α_p > 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SingularSet {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl SingularSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let z = Self { points, weights };
        z.check_shape()?;
        Ok(z)
    }

    pub fn single(p: Point, alpha: f64) -> Self {
        Self { points: vec![p], weights: vec![alpha] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    fn check_shape(&self) -> Result<()> {
        if self.points.len() != self.weights.len() {
            return Err(Error::InvalidSingularSet(format!(
                "{} points but {} weights",
                self.points.len(),
                self.weights.len()
            )));
        }
        if let Some(a) = self.weights.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidSingularSet(format!("weight {a} is not positive")));
        }
        Ok(())
    }

    /// Full validation against a domain: interior, pairwise distinct, `α > 0`.
    pub fn validate(&self, green: &GreenEngine) -> Result<()> {
        self.check_shape()?;
        let dom = green.domain();
        for (i, p) in self.points.iter().enumerate() {
            if !dom.contains(*p) {
                return Err(Error::InvalidSingularSet(format!("source #{i} is not interior")));
            }
            if self.points[..i].contains(p) {
                return Err(Error::InvalidSingularSet(format!("source #{i} is repeated")));
            }
        }
        Ok(())
    }
}

/// Candidate blow-up points `ξ = (ξ_1, …, ξ_N)`; serialized as `[[x, y], …]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub Vec<Point>);

impl Configuration {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    pub fn min_pair_distance(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (j, a) in self.0.iter().enumerate() {
            for b in &self.0[j + 1..] {
                m = m.min((a - b).norm());
            }
        }
        m
    }

    pub fn min_source_distance(&self, z: &SingularSet) -> f64 {
        self.0.iter().flat_map(|x| z.points.iter().map(move |p| (x - p).norm())).fold(f64::INFINITY, f64::min)
    }
}

/// Membership floor for pair and source distances.
pub fn membership_floor(green: &GreenEngine) -> f64 {
    1e-9 * green.domain().diameter()
}

/// Checks `ξ ∈ M`: interior points, off `Z`, pairwise distinct.
pub fn check_admissible(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<()> {
    if xi.is_empty() {
        return Err(Error::InvalidConfiguration("empty configuration".into()));
    }
    let floor = membership_floor(green);
    for (j, x) in xi.0.iter().enumerate() {
        if !x.x.is_finite() || !x.y.is_finite() || !green.domain().contains(*x) {
            return Err(Error::InvalidConfiguration(format!("point #{j} is not interior")));
        }
    }
    if xi.min_pair_distance() < floor {
        return Err(Error::InvalidConfiguration("two points (nearly) coincide".into()));
    }
    if xi.min_source_distance(z) < floor {
        return Err(Error::InvalidConfiguration("a point (nearly) coincides with a source".into()));
    }
    Ok(())
}

/// `log a(x) = Σ_p α_p (2 log|x - p| - 4π H(x, p))`.
pub fn log_weight_a(green: &GreenEngine, z: &SingularSet, x: Point) -> Result<f64> {
    let mut acc = KahanSum::new();
    for (p, alpha) in z.iter() {
        let r = (x - p).norm();
        if r == 0.0 {
            return Err(Error::PointAtSource(x));
        }
        acc.add(alpha * (2.0 * r.ln() - 4.0 * PI * green.robin_regular(x, p)?));
    }
    Ok(acc.value())
}

pub fn weight_a(green: &GreenEngine, z: &SingularSet, x: Point) -> Result<f64> {
    Ok(log_weight_a(green, z, x)?.exp())
}

/// `∇ log a(x)`.
pub fn grad_log_weight_a(green: &GreenEngine, z: &SingularSet, x: Point) -> Result<Point> {
    let mut g = Point::zeros();
    for (p, alpha) in z.iter() {
        let d = x - p;
        if d.norm_squared() == 0.0 {
            return Err(Error::PointAtSource(x));
        }
        g += alpha * (2.0 * d / d.norm_squared() - 4.0 * PI * green.grad_x_robin(x, p)?);
    }
    Ok(g)
}

/// Value, constraint functional, gradient and term breakdown of `Ψ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub psi: f64,
    pub phi: f64,
    pub grad_psi: Vec<Point>,
    pub grad_norm: f64,
    pub robin_sum: f64,
    pub source_sum: f64,
    pub pair_sum: f64,
}

/// The three terms of `Ψ`: `½ΣH(ξ_j,ξ_j)`, `Σ_p (α_p/2) Σ_j G(ξ_j,p)` and
/// `½Σ_{j≠k} G(ξ_j,ξ_k)`.
pub fn psi_terms(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<(f64, f64, f64)> {
    check_admissible(green, z, xi)?;
    let mut robin = KahanSum::new();
    let mut source = KahanSum::new();
    let mut pair = KahanSum::new();
    for (j, &x) in xi.0.iter().enumerate() {
        robin.add(0.5 * green.robin_regular(x, x)?);
        for (p, alpha) in z.iter() {
            source.add(0.5 * alpha * green.green(x, p)?);
        }
        for (k, &y) in xi.0.iter().enumerate() {
            if k != j {
                pair.add(0.5 * green.green(x, y)?);
            }
        }
    }
    Ok((robin.value(), source.value(), pair.value()))
}

pub fn psi(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<f64> {
    let (r, s, p) = psi_terms(green, z, xi)?;
    Ok(r - s + p)
}

pub fn phi(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<f64> {
    let (r, s, p) = psi_terms(green, z, xi)?;
    Ok(r - s - p)
}

/// `Ψ` written with the weight: `½ΣH + (1/8π)Σ log a(ξ_j) + ½Σ_{j≠k}G`.
pub fn psi_weight_form(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<f64> {
    check_admissible(green, z, xi)?;
    let mut acc = KahanSum::new();
    for (j, &x) in xi.0.iter().enumerate() {
        acc.add(0.5 * green.robin_regular(x, x)?);
        acc.add(log_weight_a(green, z, x)? / (8.0 * PI));
        for (k, &y) in xi.0.iter().enumerate() {
            if k != j {
                acc.add(0.5 * green.green(x, y)?);
            }
        }
    }
    Ok(acc.value())
}

/// Component `j` is `∇_xH(ξ_j,ξ_j) - Σ_p (α_p/2)∇_xG(ξ_j,p) + Σ_{k≠j}∇_xG(ξ_j,ξ_k)`.
pub fn grad_psi(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<Vec<Point>> {
    check_admissible(green, z, xi)?;
    let mut out = Vec::with_capacity(xi.len());
    for (j, &x) in xi.0.iter().enumerate() {
        let mut gx = KahanSum::new();
        let mut gy = KahanSum::new();
        let mut push = |v: Point| {
            gx.add(v.x);
            gy.add(v.y);
        };
        push(green.robin_diagonal_gradient(x)?);
        for (p, alpha) in z.iter() {
            push(-0.5 * alpha * green.grad_x_green(x, p)?);
        }
        for (k, &y) in xi.0.iter().enumerate() {
            if k != j {
                push(green.grad_x_green(x, y)?);
            }
        }
        out.push(Point::new(gx.value(), gy.value()));
    }
    Ok(out)
}

pub fn gradient_norm(g: &[Point]) -> f64 {
    g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

pub fn energy_report(green: &GreenEngine, z: &SingularSet, xi: &Configuration) -> Result<EnergyReport> {
    let (robin_sum, source_sum, pair_sum) = psi_terms(green, z, xi)?;
    let grad = grad_psi(green, z, xi)?;
    Ok(EnergyReport {
        psi: robin_sum - source_sum + pair_sum,
        phi: robin_sum - source_sum - pair_sum,
        grad_norm: gradient_norm(&grad),
        grad_psi: grad,
        robin_sum,
        source_sum,
        pair_sum,
    })
}

/// `Σ_{j≠k} [(ξ_j - ξ_k)/|ξ_j - ξ_k|²]·(ξ_j - base)`; equals `n(n-1)/2`.
pub fn pair_identity_check(points: &[Point], base: Point) -> Result<f64> {
    let mut acc = KahanSum::new();
    for (j, a) in points.iter().enumerate() {
        if *a == base {
            return Err(Error::CoincidentPoints(*a));
        }
        for (k, b) in points.iter().enumerate() {
            if k == j {
                continue;
            }
            let d = a - b;
            let n2 = d.norm_squared();
            if n2 == 0.0 {
                return Err(Error::CoincidentPoints(*a));
            }
            acc.add(d.dot(&(a - base)) / n2);
        }
    }
    Ok(acc.value())
}
