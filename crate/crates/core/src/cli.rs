//! Run configuration and the command implementations behind the binary.
//!
//! Every command reads one JSON [`RunConfig`], writes its outputs under the
//! configured directory together with a `manifest.json`, and maps library
//! errors to exit codes through [`exit_code`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ansatz::{self, ApproxSolution, Field, ProjectionMode};
use crate::configsearch::{self, CriticalPointReport, MultiStartReport, ScanRow, SearchOptions, SplittingPlan};
use crate::domain::DomainSpec;
use crate::energy::{self, Configuration, SingularSet};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::green::{GreenEngine, GreenMethod};
use crate::pdesolver::{self, ConcentrationSummary, SolveReport, SolverOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NO_SPLITTING: i32 = 2;
pub const EXIT_INTEGER_WEIGHT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoSplitting { .. } | Error::ConePlacement => EXIT_NO_SPLITTING,
        Error::IntegerWeightObstruction { .. } => EXIT_INTEGER_WEIGHT,
        Error::Config(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::InvalidDomain(_)
        | Error::InvalidSingularSet(_)
        | Error::InvalidConfiguration(_)
        | Error::PointOutsideDomain(_)
        | Error::TestPointTooClose(_)
        | Error::OverlappingBalls => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenConfig {
    /// Defaults to the closed form on the unit disk and the grid backend elsewhere.
    pub method: Option<GreenMethod>,
    pub grid_n: usize,
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self { method: None, grid_n: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Saddle refinement stops at `|∇Ψ|` below this.
    pub gradient: f64,
    /// Newton stops at `‖F‖_∞ < newton·(1 + ‖ε² a e^v‖_∞)`.
    pub newton: f64,
    /// Relative agreement of successive quadrature refinements for the
    /// ansatz energy.
    pub quadrature: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            gradient: SearchOptions::default().gradient_tol,
            newton: SolverOptions::default().newton_tol,
            quadrature: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Index of the source the polygon collapses onto.
    pub source: usize,
    pub n_sides: usize,
    pub rhos: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub center_offset: Option<Point>,
}

/// The single JSON file describing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    #[serde(default)]
    pub singular_set: SingularSet,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub epsilon_list: Vec<f64>,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default)]
    pub green: GreenConfig,
    #[serde(default)]
    pub projection: ProjectionMode,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for the multi-start search.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub green_pairs: Vec<(Point, Point)>,
}

fn default_grid_n() -> usize {
    512
}

fn default_jobs() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if self.epsilon_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config("epsilons must be positive".into()));
        }
        if self.epsilon_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("epsilon_list must be strictly decreasing".into()));
        }
        let tols = [self.tolerances.gradient, self.tolerances.newton, self.tolerances.quadrature];
        if tols.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.grid_n < 16 {
            return Err(Error::Config("grid_n must be at least 16".into()));
        }
        Ok(())
    }

    /// Search options with the run's seed and gradient tolerance applied.
    pub fn search_options(&self) -> SearchOptions {
        SearchOptions { seed: self.seed, gradient_tol: self.tolerances.gradient, jobs: self.jobs, ..self.search }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { newton_tol: self.tolerances.newton, ..self.solver }
    }

    pub fn green_engine(&self) -> Result<GreenEngine> {
        let method = self.green.method.unwrap_or(if self.domain.is_unit_disk() {
            GreenMethod::ClosedFormDisk
        } else {
            GreenMethod::GridHarmonic
        });
        GreenEngine::new(self.domain.clone(), method, self.green.grid_n)
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(self)?)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the files of one command and writes the manifest last.
pub struct RunDir {
    root: PathBuf,
    outputs: Vec<(String, String)>,
}

#[derive(Debug, Serialize)]
struct ManifestEntry<'a> {
    file: &'a str,
    sha256: &'a str,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    timestamp_unix: u64,
    outputs: Vec<ManifestEntry<'a>>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), outputs: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, bytes)?;
        self.outputs.push((name.to_string(), hex(&Sha256::digest(bytes))));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(self, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: cfg.hash()?,
            seed: cfg.seed,
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            outputs: self.outputs.iter().map(|(f, h)| ManifestEntry { file: f, sha256: h }).collect(),
        };
        let path = self.root.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn cmd_validate(cfg: &RunConfig, out: &mut RunDir) -> Result<SplittingPlan> {
    let green = cfg.green_engine()?;
    cfg.singular_set.validate(&green)?;
    let plan = configsearch::validate(cfg.n, &cfg.singular_set, &cfg.domain)?;
    out.write_json("plan.json", &plan)?;
    Ok(plan)
}

#[derive(Debug, Serialize)]
pub struct FindCriticalOutput {
    pub selected: CriticalPointReport,
    pub search: MultiStartReport,
}

fn find_critical(
    cfg: &RunConfig,
    green: &GreenEngine,
) -> Result<(SplittingPlan, MultiStartReport, CriticalPointReport)> {
    cfg.singular_set.validate(green)?;
    let plan = configsearch::validate(cfg.n, &cfg.singular_set, &cfg.domain)?;
    let ms = configsearch::multi_start(&plan, &cfg.singular_set, green, &cfg.search_options())?;
    let Some(sel) = ms.selected else {
        return Err(Error::SolverDiverged("no start reached a critical point".into()));
    };
    let chosen = ms.critical_points[sel].clone();
    Ok((plan, ms, chosen))
}

fn critical_csv(ms: &MultiStartReport) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (s, c) in ms.critical_points.iter().enumerate() {
        for (j, p) in c.xi_star.points().iter().enumerate() {
            rows.push(vec![
                s.to_string(),
                j.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                c.psi_value.to_string(),
                c.grad_norm.to_string(),
                c.converged.to_string(),
                c.classification.clone(),
            ]);
        }
    }
    csv_bytes(&["start", "point", "x", "y", "psi", "grad_norm", "converged", "classification"], rows)
}

pub fn cmd_find_critical(cfg: &RunConfig, out: &mut RunDir) -> Result<CriticalPointReport> {
    let green = cfg.green_engine()?;
    let (plan, ms, chosen) = find_critical(cfg, &green)?;
    out.write_json("plan.json", &plan)?;
    out.write_json("critical_point.json", &FindCriticalOutput { selected: chosen.clone(), search: ms.clone() })?;
    out.write("critical_points.csv", &critical_csv(&ms)?)?;
    Ok(chosen)
}

#[derive(Debug, Serialize)]
pub struct SolveOutput {
    pub xi_star: Configuration,
    pub grad_norm: f64,
    pub reports: Vec<SolveReport>,
    pub concentration: Vec<ConcentrationSummary>,
    pub ball_radius: f64,
}

/// validate → minimize → refine → ansatz → continuation → observables.
pub fn run_pipeline(cfg: &RunConfig, green: &GreenEngine) -> Result<(MultiStartReport, SolveOutput)> {
    if cfg.epsilon_list.is_empty() {
        return Err(Error::Config("solve needs a non-empty epsilon_list".into()));
    }
    let (_, ms, chosen) = find_critical(cfg, green)?;
    let z = &cfg.singular_set;
    let xi = configsearch::canonical_orientation(&cfg.domain, z, &chosen.xi_star);
    let opts = cfg.solver_options();
    let reports = pdesolver::continuation(green, z, &xi, &cfg.epsilon_list, cfg.grid_n, cfg.projection, &opts)?;
    let radius = opts.ball_radius.unwrap_or_else(|| pdesolver::default_ball_radius(&cfg.domain, z, xi.points()));
    let concentration =
        reports.iter().map(|r| pdesolver::concentration_report(green, z, r, &xi, radius)).collect::<Result<_>>()?;
    Ok((ms, SolveOutput { xi_star: xi, grad_norm: chosen.grad_norm, reports, concentration, ball_radius: radius }))
}

/// Optional extra outputs of `solve`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveExtras {
    /// Solution and ansatz fields as CSV.
    pub dump_fields: bool,
    /// Ansatz energy against its predicted expansion (`expansion.csv`).
    pub energy: bool,
}

pub fn cmd_solve(cfg: &RunConfig, out: &mut RunDir, extras: SolveExtras) -> Result<SolveOutput> {
    let green = cfg.green_engine()?;
    let (ms, sol) = run_pipeline(cfg, &green)?;
    let selected = ms.critical_points[ms.selected.expect("pipeline selected a start")].clone();
    out.write_json("critical_point.json", &FindCriticalOutput { selected, search: ms.clone() })?;
    out.write("critical_points.csv", &critical_csv(&ms)?)?;
    for (k, r) in sol.reports.iter().enumerate() {
        out.write_json(&format!("solve_{k:02}.json", k = k), r)?;
        if extras.dump_fields {
            let mut buf = Vec::new();
            r.field.write_csv(&mut buf)?;
            out.write(&format!("field_{k:02}.csv"), &buf)?;
            let ansatz = ApproxSolution::new(&green, &cfg.singular_set, &sol.xi_star, r.epsilon, cfg.projection)?;
            out.write(&format!("ansatz_{k:02}.csv"), &sample_csv(&r.field, &ansatz)?)?;
        }
    }
    out.write_json(
        "pipeline.json",
        &serde_json::json!({
            "xi_star": sol.xi_star,
            "grad_norm": sol.grad_norm,
            "ball_radius": sol.ball_radius,
            "epsilon_list": cfg.epsilon_list,
        }),
    )?;
    out.write_json("concentration.json", &sol.concentration)?;
    out.write("summary.csv", &summary_csv(&sol)?)?;
    if extras.energy {
        out.write("expansion.csv", &expansion_csv(cfg, &green, &sol)?)?;
    }
    Ok(sol)
}

const ENERGY_MAX_REFINEMENTS: usize = 3;

fn expansion_csv(cfg: &RunConfig, green: &GreenEngine, sol: &SolveOutput) -> Result<Vec<u8>> {
    let psi = energy::psi(green, &cfg.singular_set, &sol.xi_star)?;
    let n = sol.xi_star.len();
    let mut rows = Vec::with_capacity(cfg.epsilon_list.len());
    for &eps in &cfg.epsilon_list {
        let approx = ApproxSolution::new(green, &cfg.singular_set, &sol.xi_star, eps, cfg.projection)?;
        let r = ansatz::energy_i_refined(&approx, cfg.tolerances.quadrature, ENERGY_MAX_REFINEMENTS)?;
        if !r.converged {
            log::warn!("eps = {eps}: ansatz energy changed by {:e} on the last refinement", r.relative_change);
        }
        let pred = ansatz::expansion_prediction(n, eps, psi);
        rows.push(vec![
            eps.to_string(),
            r.energy.value.to_string(),
            pred.to_string(),
            (r.energy.value - pred).to_string(),
            r.relative_change.to_string(),
            r.converged.to_string(),
        ]);
    }
    csv_bytes(&["epsilon", "energy", "prediction", "remainder", "quadrature_change", "quadrature_converged"], rows)
}

fn sample_csv(on: &pdesolver::DiscreteField, f: &dyn Field) -> Result<Vec<u8>> {
    let grid = on.grid();
    csv_bytes(
        &["x", "y", "value"],
        grid.unknown_positions().map(|p| vec![p.x.to_string(), p.y.to_string(), f.value(p).to_string()]),
    )
}

fn summary_csv(sol: &SolveOutput) -> Result<Vec<u8>> {
    let rows = sol.reports.iter().zip(&sol.concentration).map(|(r, c)| {
        let worst = c.balls.iter().map(|b| (b.mass / (8.0 * std::f64::consts::PI) - 1.0).abs()).fold(0.0, f64::max);
        vec![
            r.epsilon.to_string(),
            r.newton_iters.to_string(),
            r.residual_norm.to_string(),
            r.total_mass.to_string(),
            worst.to_string(),
            c.complement.to_string(),
            r.farfield_deviation.map_or(String::new(), |d| d.to_string()),
        ]
    });
    csv_bytes(
        &[
            "epsilon",
            "newton_iters",
            "residual",
            "total_mass",
            "max_ball_mass_rel_error",
            "complement_mass",
            "farfield_deviation",
        ],
        rows,
    )
}

pub fn cmd_collision_scan(cfg: &RunConfig, out: &mut RunDir) -> Result<Vec<ScanRow>> {
    let scan = cfg.scan.as_ref().ok_or_else(|| Error::Config("collision-scan needs a `scan` block".into()))?;
    let green = cfg.green_engine()?;
    cfg.singular_set.validate(&green)?;
    let rows = configsearch::collision_scan(
        &green,
        &cfg.singular_set,
        scan.source,
        scan.n_sides,
        &scan.rhos,
        scan.phase,
        scan.center_offset.unwrap_or_else(Point::zeros),
    )?;
    let alpha = cfg.singular_set.weights.get(scan.source).copied().unwrap_or(0.0);
    let predicted = configsearch::polygon_slope_coefficient(scan.n_sides, alpha);
    let bytes = csv_bytes(
        &["rho", "psi", "grad_norm", "slope", "predicted_slope"],
        rows.iter().map(|r| {
            vec![
                r.rho.to_string(),
                r.psi.to_string(),
                r.grad_norm.to_string(),
                r.slope.map_or(String::new(), |s| s.to_string()),
                predicted.to_string(),
            ]
        }),
    )?;
    out.write("collision_scan.csv", &bytes)?;
    Ok(rows)
}

pub fn cmd_green_eval(cfg: &RunConfig, out: &mut RunDir) -> Result<Vec<(f64, f64)>> {
    if cfg.green_pairs.is_empty() {
        return Err(Error::Config("green-eval needs `green_pairs`".into()));
    }
    let green = cfg.green_engine()?;
    let vals: Vec<(f64, f64)> = cfg
        .green_pairs
        .iter()
        .map(|&(x, y)| Ok((green.green(x, y)?, green.robin_regular(x, y)?)))
        .collect::<Result<_>>()?;
    let bytes = csv_bytes(
        &["x1", "x2", "y1", "y2", "G", "H"],
        cfg.green_pairs.iter().zip(&vals).map(|((x, y), (g, h))| {
            vec![x.x.to_string(), x.y.to_string(), y.x.to_string(), y.y.to_string(), g.to_string(), h.to_string()]
        }),
    )?;
    out.write("green.csv", &bytes)?;
    Ok(vals)
}

#[derive(Debug, Serialize)]
pub struct DryRun {
    pub plan: SplittingPlan,
    pub grid_n: usize,
    pub approx_unknowns: usize,
    pub epsilon_list: Vec<f64>,
    pub estimated_memory_mb: f64,
}

/// The resolved plan, grid sizes and a rough memory bound, without solving.
pub fn dry_run(cfg: &RunConfig) -> Result<DryRun> {
    let plan = configsearch::validate(cfg.n, &cfg.singular_set, &cfg.domain)?;
    let half = cfg.domain.bounding_half_width();
    let area = std::f64::consts::PI * cfg.domain.min_radius() * cfg.domain.max_radius();
    let unknowns = (area / (4.0 * half * half) * (cfg.grid_n * cfg.grid_n) as f64) as usize;
    // sparse LU of a 2-D five-point operator: ~ n log2 n fill, 16 bytes per entry
    let fill = unknowns as f64 * (unknowns as f64).log2().max(1.0) * 4.0;
    Ok(DryRun {
        plan,
        grid_n: cfg.grid_n,
        approx_unknowns: unknowns,
        epsilon_list: cfg.epsilon_list.clone(),
        estimated_memory_mb: (fill * 16.0 + unknowns as f64 * 200.0) / 1e6,
    })
}

/// Writes `text` to stdout, ignoring a closed pipe.
pub fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> &'static str {
        r#"{"domain": {"kind": "unit_disk"}, "singular_set": {"points": [[0.0, 0.0]], "weights": [1.5]}, "N": 2}"#
    }

    #[test]
    fn config_defaults_and_hash_are_stable() {
        let a = RunConfig::from_json(base()).unwrap();
        let b = RunConfig::from_json(base()).unwrap();
        assert_eq!(a.grid_n, 512);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.green_engine().unwrap().method(), GreenMethod::ClosedFormDisk);
    }

    #[test]
    fn config_rejects_bad_input() {
        let bad = [
            r#"{"domain": {"kind": "unit_disk"}, "N": 0}"#,
            r#"{"domain": {"kind": "unit_disk"}, "N": 1, "epsilon_list": [0.05, 0.1]}"#,
            r#"{"domain": {"kind": "unit_disk"}, "N": 1, "tolerances": {"newton": -1.0}}"#,
            r#"{"domain": {"kind": "unit_disk"}, "N": 1, "bogus": 3}"#,
        ];
        for b in bad {
            let e = RunConfig::from_json(b).unwrap_err();
            assert_eq!(exit_code(&e), EXIT_USAGE, "{b}");
        }
    }

    #[test]
    fn exit_codes_follow_the_obstruction() {
        assert_eq!(exit_code(&Error::NoSplitting { n: 3, capacity: 1 }), EXIT_NO_SPLITTING);
        assert_eq!(exit_code(&Error::IntegerWeightObstruction { index: 0, alpha: 1.0, n: 2 }), EXIT_INTEGER_WEIGHT);
        assert_eq!(exit_code(&Error::NewtonDiverged { epsilon: 0.1, reason: String::new() }), EXIT_NUMERICAL);
    }

    #[test]
    fn dry_run_reports_the_plan() {
        let cfg = RunConfig::from_json(base()).unwrap();
        let d = dry_run(&cfg).unwrap();
        assert_eq!(d.plan.assignment[0].count, 2);
        assert!(d.approx_unknowns > 200_000 && d.approx_unknowns < 210_000);
    }
}
