//! Quadrature for integrands with sharp peaks at a few known centers.
//!
//! A smooth partition of unity splits `∫_Ω f` into one local polar integral
//! per center (log-spaced radial Gauss–Legendre panels, trapezoid in angle)
//! and a remainder integrated in global polar coordinates
//! `x = s r(θ) e^{iθ}` of the star-shaped domain.

use std::f64::consts::PI;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

use crate::domain::DomainSpec;
use crate::geometry::{polar, KahanSum, Point};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pairs: Vec<(f64, f64)>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let gl = GaussLegendre::new(n.max(2)).expect("degree >= 2");
        Self { pairs: gl.as_node_weight_pairs().to_vec() }
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.pairs.iter().map(move |&(x, w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).collect::<KahanSum>().value()
    }
}

fn rule16() -> &'static GaussRule {
    static R: OnceLock<GaussRule> = OnceLock::new();
    R.get_or_init(|| GaussRule::new(16))
}

fn rule8() -> &'static GaussRule {
    static R: OnceLock<GaussRule> = OnceLock::new();
    R.get_or_init(|| GaussRule::new(8))
}

/// Adaptive Gauss–Legendre on `[a, b]` (8- vs 16-point estimates, bisection).
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let fine = rule16().integrate(a, b, f);
        let coarse = rule8().integrate(a, b, f);
        if (fine - coarse).abs() <= tol || depth >= 48 {
            return fine;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// Adaptive integral over `[0, ∞)` through `r = t/(1 - t)`.
pub fn adaptive_half_line<F: Fn(f64) -> f64>(f: &F, tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        f(t / s) / (s * s)
    };
    adaptive(&g, 0.0, 1.0, tol)
}

/// `C^∞` cutoff: 1 on `[0, 1/2]`, 0 on `[1, ∞)`.
pub fn bump(t: f64) -> f64 {
    if t <= 0.5 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let s = 2.0 * (t - 0.5);
    let g = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() };
    let (a, b) = (g(1.0 - s), g(s));
    a / (a + b)
}

/// A peak of the integrand: center and the smallest length scale to resolve.
#[derive(Debug, Clone, Copy)]
pub struct Core {
    pub center: Point,
    pub scale: f64,
}

/// Resolution knobs for [`PeakedQuadrature`].
#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub core_angles: usize,
    pub global_angles: usize,
    pub global_panels: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { core_angles: 128, global_angles: 1024, global_panels: 48 }
    }
}

impl QuadratureOptions {
    /// Every resolution doubled.
    pub fn refined(self) -> Self {
        Self {
            core_angles: 2 * self.core_angles,
            global_angles: 2 * self.global_angles,
            global_panels: 2 * self.global_panels,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    center: Point,
    radius: f64,
    r_min: f64,
}

/// Partition-of-unity quadrature over a domain with known peak locations.
#[derive(Debug, Clone)]
pub struct PeakedQuadrature {
    domain: DomainSpec,
    patches: Vec<Patch>,
    opts: QuadratureOptions,
}

impl PeakedQuadrature {
    /// Cores must be interior and pairwise distinct.
    pub fn new(domain: &DomainSpec, cores: &[Core], opts: QuadratureOptions) -> Self {
        let mut patches = Vec::with_capacity(cores.len());
        for (k, c) in cores.iter().enumerate() {
            let mut reach = domain.dist_to_boundary(c.center).unwrap_or(0.0);
            for (l, o) in cores.iter().enumerate() {
                if l != k {
                    reach = reach.min((c.center - o.center).norm());
                }
            }
            let radius = 0.45 * reach;
            if radius > 0.0 {
                patches.push(Patch { center: c.center, radius, r_min: (c.scale / 32.0).min(radius / 4.0) });
            }
        }
        Self { domain: domain.clone(), patches, opts }
    }

    fn weight_outside(&self, x: Point) -> f64 {
        let mut w = 1.0;
        for p in &self.patches {
            w -= bump((x - p.center).norm() / p.radius);
        }
        w
    }

    fn patch_integral<const K: usize, F: Fn(Point) -> [f64; K]>(&self, p: &Patch, f: &F) -> [f64; K] {
        let rule = rule16();
        let na = self.opts.core_angles;
        let dth = 2.0 * PI / na as f64;
        let dirs: Vec<Point> = (0..na).map(|i| polar(i as f64 * dth)).collect();
        // log-spaced up to R/2, then uniform panels across the cutoff ramp
        let half = 0.5 * p.radius;
        let mut edges = vec![0.0, p.r_min.min(half)];
        while *edges.last().unwrap() < half {
            let next = (edges.last().unwrap() * 2.0).min(half);
            edges.push(next);
        }
        for k in 1..=8 {
            edges.push(half * (1.0 + k as f64 / 8.0));
        }
        let mut acc = [KahanSum::new(); K];
        for w in edges.windows(2) {
            for (r, wr) in rule.mapped(w[0], w[1]) {
                let chi = bump(r / p.radius);
                if chi == 0.0 {
                    continue;
                }
                let mut ring = [KahanSum::new(); K];
                for d in &dirs {
                    let v = f(p.center + r * d);
                    for (a, vi) in ring.iter_mut().zip(v) {
                        a.add(vi);
                    }
                }
                for (a, ri) in acc.iter_mut().zip(&ring) {
                    a.add(wr * r * chi * dth * ri.value());
                }
            }
        }
        acc.map(|a| a.value())
    }

    fn global_integral<const K: usize, F: Fn(Point) -> [f64; K]>(&self, f: &F) -> [f64; K] {
        let rule = rule16();
        let na = self.opts.global_angles;
        let np = self.opts.global_panels;
        let dth = 2.0 * PI / na as f64;
        let mut acc = [KahanSum::new(); K];
        for i in 0..na {
            let th = i as f64 * dth;
            let (rb, _, _) = self.domain.radius(th);
            let e = polar(th);
            let mut line = [KahanSum::new(); K];
            for k in 0..np {
                let (a, b) = (k as f64 / np as f64, (k + 1) as f64 / np as f64);
                for (s, ws) in rule.mapped(a, b) {
                    let x = s * rb * e;
                    let w = self.weight_outside(x);
                    if w.abs() < 1e-300 {
                        continue;
                    }
                    let v = f(x);
                    for (l, vi) in line.iter_mut().zip(v) {
                        l.add(ws * s * w * vi);
                    }
                }
            }
            for (a, l) in acc.iter_mut().zip(&line) {
                a.add(rb * rb * dth * l.value());
            }
        }
        acc.map(|a| a.value())
    }

    /// `∫_Ω f` for a vector-valued integrand.
    pub fn integrate_many<const K: usize, F: Fn(Point) -> [f64; K]>(&self, f: F) -> [f64; K] {
        let mut acc = [KahanSum::new(); K];
        for p in &self.patches {
            for (a, v) in acc.iter_mut().zip(self.patch_integral(p, &f)) {
                a.add(v);
            }
        }
        for (a, v) in acc.iter_mut().zip(self.global_integral(&f)) {
            a.add(v);
        }
        acc.map(|a| a.value())
    }

    /// `∫_Ω f`.
    pub fn integrate<F: Fn(Point) -> f64>(&self, f: F) -> f64 {
        self.integrate_many(|x| [f(x)])[0]
    }

    /// `∫_{B_r(c)} f` for a disk inside the domain, resolving a peak at `c`
    /// of width `scale`.
    pub fn integrate_ball<F: Fn(Point) -> f64>(center: Point, radius: f64, scale: f64, angles: usize, f: F) -> f64 {
        let rule = rule16();
        let dth = 2.0 * PI / angles as f64;
        let mut edges = vec![0.0, (scale / 32.0).min(radius / 4.0)];
        while *edges.last().unwrap() < radius {
            let next = (edges.last().unwrap() * 2.0).min(radius);
            edges.push(next);
        }
        let mut acc = KahanSum::new();
        for w in edges.windows(2) {
            for (r, wr) in rule.mapped(w[0], w[1]) {
                let ring: KahanSum = (0..angles).map(|i| f(center + r * polar(i as f64 * dth))).collect();
                acc.add(wr * r * dth * ring.value());
            }
        }
        acc.value()
    }
}
