//! Planar domain geometry: membership, distance to the boundary, projection,
//! reflection across the boundary and the inward normal.
//!
//! Two kinds of domains are supported: the unit disk and star-shaped domains
//! (star-shaped with respect to the origin) whose boundary is the polar graph
//! `r(θ) = a0 + Σ_k (a_k cos kθ + b_k sin kθ)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{golden_section, polar, Point};

const PROJECTION_SAMPLES: usize = 256;
const PROJECTION_TOL: f64 = 1e-10;
const VALIDATION_SAMPLES: usize = 4096;

/// Truncated Fourier series for the boundary radius of a star-shaped domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierRadius {
    a0: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl FourierRadius {
    /// Builds the series from `[[a0], [a1, b1], [a2, b2], ...]`.
    pub fn from_coeffs(coeffs: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = coeffs.first() else {
            return Err(Error::InvalidDomain("empty coefficient list".into()));
        };
        if first.len() != 1 {
            return Err(Error::InvalidDomain("first coefficient group must be [a0]".into()));
        }
        let mut cos = Vec::new();
        let mut sin = Vec::new();
        for (k, c) in coeffs.iter().enumerate().skip(1) {
            if c.len() != 2 {
                return Err(Error::InvalidDomain(format!("coefficient group {k} must be [a_k, b_k]")));
            }
            cos.push(c[0]);
            sin.push(c[1]);
        }
        let all = std::iter::once(first[0]).chain(cos.iter().copied()).chain(sin.iter().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDomain("non-finite Fourier coefficient".into()));
        }
        Ok(Self { a0: first[0], cos, sin })
    }

    pub fn to_coeffs(&self) -> Vec<Vec<f64>> {
        std::iter::once(vec![self.a0]).chain(self.cos.iter().zip(&self.sin).map(|(a, b)| vec![*a, *b])).collect()
    }

    /// r(θ), r'(θ), r''(θ).
    pub fn eval(&self, theta: f64) -> (f64, f64, f64) {
        let mut r = self.a0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (i, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let k = (i + 1) as f64;
            let (s, c) = (k * theta).sin_cos();
            r += a * c + b * s;
            d1 += k * (-a * s + b * c);
            d2 -= k * k * (a * c + b * s);
        }
        (r, d1, d2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    UnitDisk,
    StarShaped(FourierRadius),
}

/// A validated planar domain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainJson", into = "DomainJson")]
pub struct DomainSpec {
    kind: DomainKind,
    collar: f64,
    min_radius: f64,
    max_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DomainJson {
    UnitDisk,
    Star {
        coeffs: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        collar: Option<f64>,
    },
}

impl TryFrom<DomainJson> for DomainSpec {
    type Error = Error;

    fn try_from(j: DomainJson) -> Result<Self> {
        match j {
            DomainJson::UnitDisk => Ok(DomainSpec::unit_disk()),
            DomainJson::Star { coeffs, collar } => DomainSpec::star(&coeffs, collar),
        }
    }
}

impl From<DomainSpec> for DomainJson {
    fn from(d: DomainSpec) -> Self {
        match d.kind {
            DomainKind::UnitDisk => DomainJson::UnitDisk,
            DomainKind::StarShaped(f) => DomainJson::Star { coeffs: f.to_coeffs(), collar: Some(d.collar) },
        }
    }
}

impl DomainSpec {
    pub fn unit_disk() -> Self {
        Self { kind: DomainKind::UnitDisk, collar: 0.2, min_radius: 1.0, max_radius: 1.0 }
    }

    /// Star-shaped domain from Fourier coefficients. `collar` defaults to
    /// `0.2 * min r(θ)`; construction fails if the collar admits competing
    /// nearest boundary points.
    pub fn star(coeffs: &[Vec<f64>], collar: Option<f64>) -> Result<Self> {
        let radius = FourierRadius::from_coeffs(coeffs)?;
        let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
        let mut kappa_max = 0.0f64;
        for i in 0..VALIDATION_SAMPLES {
            let theta = 2.0 * PI * i as f64 / VALIDATION_SAMPLES as f64;
            let (r, d1, d2) = radius.eval(theta);
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            kappa_max = kappa_max.max(curvature(r, d1, d2));
        }
        if rmin <= 0.0 {
            return Err(Error::InvalidDomain(format!("radius function is not positive (min {rmin})")));
        }
        let collar = collar.unwrap_or(0.2 * rmin);
        if !(collar > 0.0 && collar.is_finite()) {
            return Err(Error::InvalidDomain(format!("collar width must be positive, got {collar}")));
        }
        if collar * kappa_max >= 1.0 {
            return Err(Error::InvalidDomain(format!(
                "collar {collar} exceeds the minimal radius of curvature {}",
                1.0 / kappa_max
            )));
        }
        let spec = Self { kind: DomainKind::StarShaped(radius), collar, min_radius: rmin, max_radius: rmax };
        spec.check_collar_uniqueness()?;
        Ok(spec)
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn is_unit_disk(&self) -> bool {
        matches!(self.kind, DomainKind::UnitDisk)
    }

    pub fn collar(&self) -> f64 {
        self.collar
    }

    pub fn min_radius(&self) -> f64 {
        self.min_radius
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    /// Upper bound for the diameter (exact for the disk).
    pub fn diameter(&self) -> f64 {
        2.0 * self.max_radius
    }

    /// Half-width of the origin-centred square containing the closure of the domain.
    pub fn bounding_half_width(&self) -> f64 {
        self.max_radius
    }

    /// Boundary radius and its first two derivatives at angle `theta`.
    pub fn radius(&self, theta: f64) -> (f64, f64, f64) {
        match &self.kind {
            DomainKind::UnitDisk => (1.0, 0.0, 0.0),
            DomainKind::StarShaped(f) => f.eval(theta),
        }
    }

    pub fn boundary_point(&self, theta: f64) -> Point {
        self.radius(theta).0 * polar(theta)
    }

    /// Inward unit normal of the boundary at parameter `theta`.
    pub fn boundary_inward_normal(&self, theta: f64) -> Point {
        let (r, d1, _) = self.radius(theta);
        let (s, c) = theta.sin_cos();
        let tangent = Point::new(d1 * c - r * s, d1 * s + r * c);
        Point::new(-tangent.y, tangent.x).normalize()
    }

    /// Signed curvature of the boundary (positive where convex).
    pub fn boundary_curvature(&self, theta: f64) -> f64 {
        let (r, d1, d2) = self.radius(theta);
        curvature(r, d1, d2)
    }

    /// Strict interior membership.
    pub fn contains(&self, x: Point) -> bool {
        match &self.kind {
            DomainKind::UnitDisk => x.norm_squared() < 1.0,
            DomainKind::StarShaped(f) => {
                let rho = x.norm();
                rho == 0.0 || rho < f.eval(x.y.atan2(x.x)).0
            }
        }
    }

    /// Signed level function: negative inside, zero on the boundary.
    pub fn level(&self, x: Point) -> f64 {
        match &self.kind {
            DomainKind::UnitDisk => x.norm() - 1.0,
            DomainKind::StarShaped(f) => x.norm() - f.eval(x.y.atan2(x.x)).0,
        }
    }

    /// Nearest boundary point of an arbitrary point: `(theta, point, distance)`.
    pub fn nearest_boundary(&self, x: Point) -> (f64, Point, f64) {
        match &self.kind {
            DomainKind::UnitDisk => {
                let rho = x.norm();
                let theta = if rho == 0.0 { 0.0 } else { x.y.atan2(x.x) };
                let b = polar(theta);
                (theta, b, (rho - 1.0).abs())
            }
            DomainKind::StarShaped(_) => {
                let dist2 = |t: f64| (x - self.boundary_point(t)).norm_squared();
                let n = PROJECTION_SAMPLES;
                let step = 2.0 * PI / n as f64;
                let samples: Vec<f64> = (0..n).map(|i| dist2(i as f64 * step)).collect();
                let mut best = (0.0, f64::INFINITY);
                for i in 0..n {
                    let prev = samples[(i + n - 1) % n];
                    let next = samples[(i + 1) % n];
                    if samples[i] <= prev && samples[i] <= next {
                        let t0 = i as f64 * step;
                        let (t, d) = golden_section(dist2, t0 - step, t0 + step, PROJECTION_TOL);
                        if d < best.1 {
                            best = (t, d);
                        }
                    }
                }
                let theta = self.polish_projection(x, best.0).rem_euclid(2.0 * PI);
                let b = self.boundary_point(theta);
                (theta, b, (x - b).norm())
            }
        }
    }

    /// Newton steps on the stationarity condition `(b(θ) - x)·b'(θ) = 0`.
    fn polish_projection(&self, x: Point, mut theta: f64) -> f64 {
        let start = theta;
        for _ in 0..4 {
            let (r, d1, d2) = self.radius(theta);
            let (s, c) = theta.sin_cos();
            let radial = Point::new(c, s);
            let tang = Point::new(-s, c);
            let b = r * radial;
            let b1 = d1 * radial + r * tang;
            let b2 = (d2 - r) * radial + 2.0 * d1 * tang;
            let g = (b - x).dot(&b1);
            let dg = b1.norm_squared() + (b - x).dot(&b2);
            if dg <= 0.0 {
                return start;
            }
            theta -= g / dg;
        }
        let dist = |t: f64| (x - self.boundary_point(t)).norm_squared();
        if (theta - start).abs() < 1e-3 && dist(theta) <= dist(start) {
            theta
        } else {
            start
        }
    }

    pub fn dist_to_boundary(&self, x: Point) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::PointOutsideDomain(x));
        }
        Ok(self.nearest_boundary(x).2)
    }

    fn collar_projection(&self, x: Point) -> Result<(f64, Point, f64)> {
        if !self.contains(x) {
            return Err(Error::PointOutsideDomain(x));
        }
        let (theta, b, d) = self.nearest_boundary(x);
        if d >= self.collar {
            return Err(Error::OutsideCollar { point: x, dist: d, collar: self.collar });
        }
        Ok((theta, b, d))
    }

    pub fn boundary_projection(&self, x: Point) -> Result<Point> {
        Ok(self.collar_projection(x)?.1)
    }

    /// Reflection `2 p(x) - x` across the boundary.
    pub fn reflect(&self, x: Point) -> Result<Point> {
        let b = self.boundary_projection(x)?;
        Ok(2.0 * b - x)
    }

    pub fn inward_normal(&self, x: Point) -> Result<Point> {
        let (theta, b, d) = self.collar_projection(x)?;
        if d == 0.0 {
            return Err(Error::DegeneratePoint);
        }
        // Far from round-off the displacement is the normal; very close to the
        // boundary use the parametrized normal instead.
        if d > 1e-7 {
            Ok((x - b) / d)
        } else {
            Ok(self.boundary_inward_normal(theta))
        }
    }

    /// Parameter `t` in `(0, 1]` where the segment from the interior point `p`
    /// to `q` first meets the boundary (assumes `q` is not inside).
    pub fn segment_crossing(&self, p: Point, q: Point) -> f64 {
        match &self.kind {
            DomainKind::UnitDisk => {
                let d = q - p;
                let a = d.norm_squared();
                let b = 2.0 * p.dot(&d);
                let c = p.norm_squared() - 1.0;
                let disc = (b * b - 4.0 * a * c).max(0.0);
                // c < 0 so the positive root is the exit point; stable form.
                let t = if b >= 0.0 { 2.0 * c / (-b - disc.sqrt()) } else { (-b + disc.sqrt()) / (2.0 * a) };
                t.clamp(0.0, 1.0)
            }
            DomainKind::StarShaped(_) => {
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.level(p + mid * (q - p)) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    fn check_collar_uniqueness(&self) -> Result<()> {
        let n = 512;
        let depth = 0.999 * self.collar;
        for i in 0..n {
            let theta = 2.0 * PI * i as f64 / n as f64;
            let x = self.boundary_point(theta) + depth * self.boundary_inward_normal(theta);
            if !self.contains(x) {
                return Err(Error::InvalidDomain(format!("collar {} too wide near θ = {theta:.4}", self.collar)));
            }
            let (_, _, d) = self.nearest_boundary(x);
            if d < depth * (1.0 - 1e-6) {
                return Err(Error::InvalidDomain(format!(
                    "competing boundary projections within the collar near θ = {theta:.4}"
                )));
            }
        }
        Ok(())
    }
}

fn curvature(r: f64, d1: f64, d2: f64) -> f64 {
    (r * r + 2.0 * d1 * d1 - r * d2) / (r * r + d1 * d1).powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;

    fn trefoil(collar: Option<f64>) -> DomainSpec {
        DomainSpec::star(&[vec![1.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![0.1, 0.0]], collar).unwrap()
    }

    #[test]
    fn disk_membership() {
        let d = DomainSpec::unit_disk();
        assert!(d.contains(pt(0.0, 0.0)));
        assert!(!d.contains(pt(1.0, 0.0)));
        assert!(d.contains(pt(0.5, 0.5)));
    }

    #[test]
    fn disk_distances_and_projection() {
        let d = DomainSpec::unit_disk();
        assert_eq!(d.dist_to_boundary(pt(0.0, 0.0)).unwrap(), 1.0);
        assert!((d.dist_to_boundary(pt(0.3, 0.4)).unwrap() - 0.5).abs() < 1e-15);
        assert!((d.boundary_projection(pt(0.9, 0.0)).unwrap() - pt(1.0, 0.0)).norm() < 1e-15);
        assert!((d.boundary_projection(pt(0.0, -0.95)).unwrap() - pt(0.0, -1.0)).norm() < 1e-15);
        assert!((d.reflect(pt(0.9, 0.0)).unwrap() - pt(1.1, 0.0)).norm() < 1e-15);
        assert!((d.reflect(pt(0.0, 0.8)).unwrap() - pt(0.0, 1.2)).norm() < 1e-15);
        assert!((d.inward_normal(pt(0.9, 0.0)).unwrap() - pt(-1.0, 0.0)).norm() < 1e-15);
        assert!(matches!(d.dist_to_boundary(pt(1.2, 0.0)), Err(Error::PointOutsideDomain(_))));
        assert!(matches!(d.boundary_projection(pt(0.5, 0.0)), Err(Error::OutsideCollar { .. })));
    }

    #[test]
    fn disk_normal_outside_collar_errors() {
        let d = DomainSpec::unit_disk();
        // (0, 0.5) is at distance 0.5 > collar 0.2
        assert!(matches!(d.inward_normal(pt(0.0, 0.5)), Err(Error::OutsideCollar { .. })));
        let wide = DomainSpec { collar: 0.6, ..DomainSpec::unit_disk() };
        assert!((wide.inward_normal(pt(0.0, 0.5)).unwrap() - pt(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn star_distance_from_center_is_min_radius() {
        let d = trefoil(None);
        // dense oracle: min over 1e6 samples of r(θ)
        let n = 1_000_000;
        let oracle = (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                1.0 + 0.1 * (3.0 * t).cos()
            })
            .fold(f64::INFINITY, f64::min);
        let got = d.dist_to_boundary(pt(0.0, 0.0)).unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        assert!((got - 0.9).abs() < 1e-10);
    }

    #[test]
    fn star_projection_matches_dense_sampling() {
        let d = trefoil(Some(0.3));
        let x = pt(0.85, 0.0);
        let n = 1_000_000;
        let mut best = (f64::INFINITY, pt(0.0, 0.0));
        for i in 0..n {
            let t = 2.0 * PI * i as f64 / n as f64;
            let b = (1.0 + 0.1 * (3.0 * t).cos()) * polar(t);
            let dd = (x - b).norm();
            if dd < best.0 {
                best = (dd, b);
            }
        }
        let p = d.boundary_projection(x).unwrap();
        assert!((p - best.1).norm() < 1e-5, "{p:?} vs {:?}", best.1);
        assert!(((x - p).norm() - best.0).abs() < 1e-10);
    }

    #[test]
    fn star_rejects_nonpositive_radius_and_wide_collar() {
        assert!(DomainSpec::star(&[vec![0.1], vec![0.5, 0.0]], None).is_err());
        assert!(DomainSpec::star(&[vec![1.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![0.1, 0.0]], Some(0.7)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d: DomainSpec = serde_json::from_str(r#"{"kind":"unit_disk"}"#).unwrap();
        assert!(d.is_unit_disk());
        let s: DomainSpec =
            serde_json::from_str(r#"{"kind":"star","coeffs":[[1.0],[0,0],[0,0],[0.1,0]],"collar":0.18}"#).unwrap();
        assert_eq!(s.collar(), 0.18);
        let back: DomainSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<DomainSpec>(r#"{"kind":"star","coeffs":[[0.1],[0.5,0]]}"#).is_err());
    }

    #[test]
    fn segment_crossing_lands_on_boundary() {
        let d = DomainSpec::unit_disk();
        let t = d.segment_crossing(pt(0.9, 0.0), pt(1.2, 0.0));
        assert!((t - 1.0 / 3.0).abs() < 1e-14);
        let s = trefoil(None);
        let p = pt(0.5, 0.5);
        let q = pt(1.5, 1.0);
        let t = s.segment_crossing(p, q);
        assert!(s.level(p + t * (q - p)).abs() < 1e-12);
    }
}
