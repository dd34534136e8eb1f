use thiserror::Error;

use crate::geometry::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({}, {}) is not strictly inside the domain", .0.x, .0.y)]
    PointOutsideDomain(Point),

    #[error("point ({}, {}) is outside the boundary collar (distance {dist} >= collar {collar})", .point.x, .point.y)]
    OutsideCollar { point: Point, dist: f64, collar: f64 },

    #[error("inward normal undefined at a boundary point")]
    DegeneratePoint,

    #[error("coincident points ({}, {})", .0.x, .0.y)]
    CoincidentPoints(Point),

    #[error("point ({}, {}) coincides with a singular source", .0.x, .0.y)]
    PointAtSource(Point),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid singular set: {0}")]
    InvalidSingularSet(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("green engine misuse: {0}")]
    InvalidEngine(String),

    #[error("linear solver failed: {0}")]
    SolverDiverged(String),

    #[error("no splitting N = sum N_p with N_p < 1 + alpha_p exists: N = {n}, capacity = {capacity}")]
    NoSplitting { n: usize, capacity: usize },

    #[error("weight alpha_p = {alpha} of source #{index} is an integer in {{1, ..., N-1}} (N = {n})")]
    IntegerWeightObstruction { index: usize, alpha: f64, n: usize },

    #[error("could not place disjoint cones around the singular sources")]
    ConePlacement,

    #[error("iterate left the admissible set")]
    EscapedDomain,

    #[error("quadrature overflow: exp(v) is not finite")]
    QuadratureOverflow,

    #[error("grid too coarse: local spacing {spacing:e} exceeds eps*mu/8 = {required:e} at ({}, {})", .center.x, .center.y)]
    GridTooCoarse { spacing: f64, required: f64, center: Point },

    #[error("Newton iteration diverged at eps = {epsilon}: {reason}")]
    NewtonDiverged { epsilon: f64, reason: String },

    #[error("exp overflow while evaluating the nonlinearity")]
    OverflowInExp,

    #[error("concentration balls overlap or leave the domain")]
    OverlappingBalls,

    #[error("test point ({}, {}) is too close to a concentration point or source", .0.x, .0.y)]
    TestPointTooClose(Point),

    #[error("invalid run configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
