//! Dirichlet Green's function `G(x, y)` of `-Δ`, its regular part
//! `H(x, y) = G(x, y) - (1/2π) log(1/|x - y|)` and their x-gradients.
//!
//! Two backends are provided:
//!
//! * [`GreenMethod::ClosedFormDisk`]: the method of images on the unit disk,
//!   `H(x, y) = (1/4π) log(|x - y|² + (1 - |x|²)(1 - |y|²))`.
//! * [`GreenMethod::GridHarmonic`]: for each source `y` the harmonic
//!   extension of the boundary data `-(1/2π) log(1/|b - y|)` is computed on a
//!   uniform grid (compact 9-point stencil inside, Shortley–Weller at cut
//!   cells) with a single sparse LU factorization shared by all sources.
//!   Sources inside the boundary collar carry an image term analytically —
//!   the regular part of the Green's function of the osculating disk at the
//!   nearest boundary point — and only the remainder is solved on the grid.
//!   The remainder is exact zero on a disk and smooth on the scale of the
//!   grid for sources arbitrarily close to a curved boundary.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::geometry::{pt, Point};
use crate::grid::{Factorized, Grid, GridField, Operator};

const INV_2PI: f64 = 1.0 / (2.0 * PI);
const CACHE_CAPACITY: usize = 256;
const LINEAR_TOL: f64 = 1e-10;
const DISK_FOURIER_SAMPLES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMethod {
    ClosedFormDisk,
    GridHarmonic,
}

/// `(1/2π) log(1/|x - y|)`.
#[inline]
pub fn free_kernel(x: Point, y: Point) -> f64 {
    -INV_2PI * (x - y).norm().ln()
}

/// x-gradient of the free kernel: `-(1/2π)(x - y)/|x - y|²`.
#[inline]
pub fn free_kernel_grad(x: Point, y: Point) -> Point {
    let d = x - y;
    -INV_2PI * d / d.norm_squared()
}

/// Closed-form regular part on the unit disk.
pub fn disk_robin(x: Point, y: Point) -> f64 {
    let (ax, ay) = (1.0 - x.norm_squared(), 1.0 - y.norm_squared());
    0.25 / PI * ((x - y).norm_squared() + ax * ay).ln()
}

/// x-gradient of [`disk_robin`].
pub fn disk_robin_grad(x: Point, y: Point) -> Point {
    let (ax, ay) = (1.0 - x.norm_squared(), 1.0 - y.norm_squared());
    let denom = (x - y).norm_squared() + ax * ay;
    INV_2PI * (y.norm_squared() * x - y) / denom
}

/// `(1/2π)(log|x - point| + offset)`: the regular part of the Green's
/// function of the osculating disk (or half-plane) at the foot of a source.
#[derive(Debug, Clone, Copy)]
struct Image {
    point: Point,
    offset: f64,
}

impl Image {
    fn of(domain: &DomainSpec, y: Point) -> Result<Option<Self>> {
        let d = domain.dist_to_boundary(y)?;
        if !(d < domain.collar() && d > 0.0) {
            return Ok(None);
        }
        let (theta, b, _) = domain.nearest_boundary(y);
        let kappa = domain.boundary_curvature(theta);
        if kappa.abs() * domain.collar() < 1e-9 {
            return Ok(Some(Self { point: 2.0 * b - y, offset: 0.0 }));
        }
        let r = 1.0 / kappa.abs();
        let c = b + domain.boundary_inward_normal(theta) / kappa;
        let ry = (y - c).norm();
        Ok(Some(Self { point: c + (r * r / (ry * ry)) * (y - c), offset: (ry / r).ln() }))
    }

    fn value(&self, x: Point) -> f64 {
        INV_2PI * ((x - self.point).norm().ln() + self.offset)
    }

    fn gradient(&self, x: Point) -> Point {
        let d = x - self.point;
        INV_2PI * d / d.norm_squared()
    }
}

struct SourceField {
    image: Option<Image>,
    field: GridField,
}

struct GridBackend {
    grid: Arc<Grid>,
    operator: Operator,
    factor: Factorized,
}

impl GridBackend {
    fn new(domain: &DomainSpec, n: usize) -> Result<Self> {
        let grid = Arc::new(Grid::uniform(domain, n)?);
        let operator = grid.assemble_neg_laplacian(true);
        let factor = Factorized::new(operator.matrix_with_diagonal(None)?, None)?;
        Ok(Self { grid, operator, factor })
    }

    fn extend(&self, data: &dyn Fn(Point) -> f64) -> Result<GridField> {
        let g: Vec<f64> = self.grid.dirichlet_points().iter().map(|&p| data(p)).collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged("non-finite boundary data".into()));
        }
        let rhs: Vec<f64> = self.operator.boundary_term(&g).into_iter().map(|v| -v).collect();
        let u = self.factor.solve(&rhs, LINEAR_TOL)?;
        Ok(GridField::new(self.grid.clone(), u, g))
    }
}

/// Harmonic function obtained by extending boundary data into the domain.
#[derive(Debug, Clone)]
pub enum HarmonicField {
    Grid(GridField),
    DiskFourier(DiskFourier),
}

impl HarmonicField {
    pub fn value(&self, x: Point) -> f64 {
        match self {
            HarmonicField::Grid(g) => g.value(x),
            HarmonicField::DiskFourier(f) => f.value(x),
        }
    }

    pub fn gradient(&self, x: Point) -> Point {
        match self {
            HarmonicField::Grid(g) => {
                let step = 1e-5 * g.grid().xs().last().map_or(1.0, |v| 2.0 * v.abs());
                g.gradient(x, step)
            }
            HarmonicField::DiskFourier(f) => f.gradient(x),
        }
    }
}

/// Harmonic extension on the unit disk as a truncated power series
/// `Re Σ c_k z^k`, computed from equispaced boundary samples.
#[derive(Debug, Clone)]
pub struct DiskFourier {
    coeffs: Vec<Complex<f64>>,
}

impl DiskFourier {
    pub fn from_boundary(data: &dyn Fn(Point) -> f64, samples: usize) -> Result<Self> {
        let m = samples;
        let g: Vec<f64> = (0..m).map(|i| data(crate::geometry::polar(2.0 * PI * i as f64 / m as f64))).collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged("non-finite boundary data".into()));
        }
        let kmax = m / 2 - 1;
        let mut coeffs = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let (mut a, mut b) = (0.0, 0.0);
            for (i, gi) in g.iter().enumerate() {
                // k*i mod m keeps the angle argument exact
                let t = 2.0 * PI * ((k * i) % m) as f64 / m as f64;
                a += gi * t.cos();
                b += gi * t.sin();
            }
            let scale = if k == 0 { 1.0 / m as f64 } else { 2.0 / m as f64 };
            coeffs.push(Complex::new(a * scale, -b * scale));
        }
        let peak = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.norm() <= 1e-17 * peak.max(1e-300)) {
            coeffs.pop();
        }
        Ok(Self { coeffs })
    }

    fn series(&self, x: Point) -> (Complex<f64>, Complex<f64>) {
        let z = Complex::new(x.x, x.y);
        let mut f = Complex::new(0.0, 0.0);
        let mut df = Complex::new(0.0, 0.0);
        for c in self.coeffs.iter().rev() {
            df = df * z + f;
            f = f * z + c;
        }
        (f, df)
    }

    pub fn value(&self, x: Point) -> f64 {
        self.series(x).0.re
    }

    pub fn gradient(&self, x: Point) -> Point {
        let df = self.series(x).1;
        pt(df.re, -df.im)
    }

    pub fn num_modes(&self) -> usize {
        self.coeffs.len()
    }
}

/// Evaluator for `G`, `H` and their x-gradients on one domain.
pub struct GreenEngine {
    domain: DomainSpec,
    method: GreenMethod,
    grid_n: usize,
    backend: Option<GridBackend>,
    cache: Mutex<LruCache<(u64, u64), Arc<SourceField>>>,
    dump_dir: Option<PathBuf>,
    dumped: Mutex<usize>,
}

impl std::fmt::Debug for GreenEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreenEngine").field("method", &self.method).field("grid_n", &self.grid_n).finish()
    }
}

impl GreenEngine {
    pub fn closed_form_disk() -> Self {
        Self::new(DomainSpec::unit_disk(), GreenMethod::ClosedFormDisk, 0).expect("disk engine")
    }

    pub fn grid(domain: DomainSpec, grid_n: usize) -> Result<Self> {
        Self::new(domain, GreenMethod::GridHarmonic, grid_n)
    }

    pub fn new(domain: DomainSpec, method: GreenMethod, grid_n: usize) -> Result<Self> {
        let backend = match method {
            GreenMethod::ClosedFormDisk => {
                if !domain.is_unit_disk() {
                    return Err(Error::InvalidEngine("closed-form backend requires the unit disk".into()));
                }
                None
            }
            GreenMethod::GridHarmonic => {
                if grid_n < 64 {
                    return Err(Error::InvalidEngine(format!("grid_n must be >= 64, got {grid_n}")));
                }
                Some(GridBackend::new(&domain, grid_n)?)
            }
        };
        Ok(Self {
            domain,
            method,
            grid_n,
            backend,
            cache: Mutex::new(LruCache::new(NonZeroUsize::new(CACHE_CAPACITY).unwrap())),
            dump_dir: None,
            dumped: Mutex::new(0),
        })
    }

    /// Writes every newly solved regular-part field as CSV into `dir`.
    pub fn with_debug_dump(mut self, dir: PathBuf) -> Self {
        self.dump_dir = Some(dir);
        self
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn method(&self) -> GreenMethod {
        self.method
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    /// Finite-difference step used by the grid backend.
    pub fn fd_step(&self) -> f64 {
        1e-5 * self.domain.diameter()
    }

    fn check_inside(&self, x: Point) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::PointOutsideDomain(x))
        }
    }

    fn source_field(&self, y: Point) -> Result<Arc<SourceField>> {
        let backend = self.backend.as_ref().ok_or_else(|| Error::InvalidEngine("no grid backend".into()))?;
        let key = (y.x.to_bits(), y.y.to_bits());
        if let Some(f) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(f.clone());
        }
        let image = Image::of(&self.domain, y)?;
        let data = |b: Point| INV_2PI * (b - y).norm().ln() - image.map_or(0.0, |im| im.value(b));
        let field = backend.extend(&data)?;
        if let Some(dir) = &self.dump_dir {
            let mut n = self.dumped.lock().expect("dump counter poisoned");
            std::fs::create_dir_all(dir)?;
            let file = std::fs::File::create(dir.join(format!("h_field_{:04}.csv", *n)))?;
            field.write_csv(file)?;
            *n += 1;
        }
        let sf = Arc::new(SourceField { image, field });
        self.cache.lock().expect("cache poisoned").put(key, sf.clone());
        Ok(sf)
    }

    fn robin_unchecked(&self, x: Point, y: Point) -> Result<f64> {
        match self.method {
            GreenMethod::ClosedFormDisk => Ok(disk_robin(x, y)),
            GreenMethod::GridHarmonic => {
                let sf = self.source_field(y)?;
                Ok(sf.field.value(x) + sf.image.map_or(0.0, |im| im.value(x)))
            }
        }
    }

    /// Regular part `H(x, y)`; the diagonal `H(x, x)` is the Robin function.
    pub fn robin_regular(&self, x: Point, y: Point) -> Result<f64> {
        self.check_inside(x)?;
        self.check_inside(y)?;
        self.robin_unchecked(x, y)
    }

    /// Robin function `H(x, x)`.
    pub fn robin_function(&self, x: Point) -> Result<f64> {
        self.robin_regular(x, x)
    }

    pub fn green(&self, x: Point, y: Point) -> Result<f64> {
        if x == y {
            return Err(Error::CoincidentPoints(x));
        }
        Ok(free_kernel(x, y) + self.robin_regular(x, y)?)
    }

    pub fn grad_x_robin(&self, x: Point, y: Point) -> Result<Point> {
        self.check_inside(x)?;
        self.check_inside(y)?;
        match self.method {
            GreenMethod::ClosedFormDisk => Ok(disk_robin_grad(x, y)),
            GreenMethod::GridHarmonic => {
                let sf = self.source_field(y)?;
                let h = self.fd_step();
                Ok(sf.field.gradient(x, h) + sf.image.map_or(Point::zeros(), |im| im.gradient(x)))
            }
        }
    }

    pub fn grad_x_green(&self, x: Point, y: Point) -> Result<Point> {
        if x == y {
            return Err(Error::CoincidentPoints(x));
        }
        Ok(free_kernel_grad(x, y) + self.grad_x_robin(x, y)?)
    }

    /// `∇_x H(x, y)` at `x = y = ξ`, i.e. half the gradient of `ξ ↦ H(ξ, ξ)`.
    pub fn robin_diagonal_gradient(&self, xi: Point) -> Result<Point> {
        self.check_inside(xi)?;
        match self.method {
            GreenMethod::ClosedFormDisk => Ok(disk_robin_grad(xi, xi)),
            GreenMethod::GridHarmonic => {
                let h = self.fd_step();
                let diag = |p: Point| self.robin_regular(p, p);
                let ex = pt(h, 0.0);
                let ey = pt(0.0, h);
                let gx = (diag(xi + ex)? - diag(xi - ex)?) / (2.0 * h);
                let gy = (diag(xi + ey)? - diag(xi - ey)?) / (2.0 * h);
                Ok(0.5 * pt(gx, gy))
            }
        }
    }

    /// Harmonic extension of `data` from the boundary into the domain.
    pub fn harmonic_extension(&self, data: &dyn Fn(Point) -> f64) -> Result<HarmonicField> {
        match (&self.backend, self.method) {
            (Some(b), _) => Ok(HarmonicField::Grid(b.extend(data)?)),
            (None, GreenMethod::ClosedFormDisk) => {
                Ok(HarmonicField::DiskFourier(DiskFourier::from_boundary(data, DISK_FOURIER_SAMPLES)?))
            }
            (None, GreenMethod::GridHarmonic) => Err(Error::InvalidEngine("missing grid backend".into())),
        }
    }

    /// Deviations of `H` and `∂H/∂ν_x` from their reflected-point asymptotics
    /// along a sequence of collar points.
    pub fn check_boundary_expansion(&self, xs: &[Point], y: Point) -> Result<BoundaryExpansionReport> {
        let mut rows = Vec::with_capacity(xs.len());
        for &x in xs {
            let xbar = self.domain.reflect(x)?;
            let nu = self.domain.inward_normal(x)?;
            let d = self.domain.dist_to_boundary(x)?;
            let h = self.robin_regular(x, y)?;
            let dn = self.grad_x_robin(x, y)?.dot(&nu);
            let value_dev = h + free_kernel(xbar, y);
            let normal_dev = dn - INV_2PI * (y - xbar).dot(&nu) / (xbar - y).norm_squared();
            rows.push(ExpansionRow { dist: d, robin: h, value_deviation: value_dev, normal_deviation: normal_dev });
        }
        Ok(BoundaryExpansionReport::from_rows(rows))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionRow {
    pub dist: f64,
    pub robin: f64,
    pub value_deviation: f64,
    pub normal_deviation: f64,
}

/// Result of [`GreenEngine::check_boundary_expansion`]. The bounds are
/// empirical: the constants in the asymptotics are not known a priori.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryExpansionReport {
    pub rows: Vec<ExpansionRow>,
    pub sup_value_deviation: f64,
    pub sup_normal_deviation: f64,
    /// Largest change of either deviation between consecutive terms in the
    /// second half of the sequence.
    pub tail_variation: f64,
}

impl BoundaryExpansionReport {
    fn from_rows(rows: Vec<ExpansionRow>) -> Self {
        let sup_v = rows.iter().map(|r| r.value_deviation.abs()).fold(0.0, f64::max);
        let sup_n = rows.iter().map(|r| r.normal_deviation.abs()).fold(0.0, f64::max);
        let half = rows.len() / 2;
        let tail = rows[half.min(rows.len())..]
            .windows(2)
            .map(|w| {
                (w[1].value_deviation - w[0].value_deviation)
                    .abs()
                    .max((w[1].normal_deviation - w[0].normal_deviation).abs())
            })
            .fold(0.0, f64::max);
        Self { rows, sup_value_deviation: sup_v, sup_normal_deviation: sup_n, tail_variation: tail }
    }

    /// Both deviations stay below `bound` along the whole sequence.
    pub fn bounded_by(&self, bound: f64) -> bool {
        self.sup_value_deviation <= bound && self.sup_normal_deviation <= bound
    }
}

/// `G(x_n, y_n)` along pairs with `|x_n - y_n| >= c d(x_n)`.
pub fn far_pair_green_values(engine: &GreenEngine, pairs: &[(Point, Point)]) -> Result<Vec<f64>> {
    pairs.iter().map(|&(x, y)| engine.green(x, y)).collect()
}

/// `∂H/∂ν_x(x_n, y_n) - (1/2π)(d(x_n) + d(y_n))/|x̄_n - y_n|²` along pairs
/// converging to the same boundary point.
pub fn converging_pair_deviations(engine: &GreenEngine, pairs: &[(Point, Point)]) -> Result<Vec<f64>> {
    let dom = engine.domain();
    pairs
        .iter()
        .map(|&(x, y)| {
            let xbar = dom.reflect(x)?;
            let nu = dom.inward_normal(x)?;
            let dn = engine.grad_x_robin(x, y)?.dot(&nu);
            let (dx, dy) = (dom.dist_to_boundary(x)?, dom.dist_to_boundary(y)?);
            Ok(dn - INV_2PI * (dx + dy) / (xbar - y).norm_squared())
        })
        .collect()
}
