use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("expected {expected} densities for {breakpoints} breakpoints, got {got}")]
    LengthMismatch {
        breakpoints: usize,
        expected: usize,
        got: usize,
    },
    #[error("breakpoints must be finite and strictly increasing (index {index})")]
    NonIncreasingBreakpoints { index: usize },
    #[error("density {index} is negative or not finite ({value})")]
    NegativeDensity { index: usize, value: f64 },
    #[error("total mass is zero")]
    ZeroMass,
    #[error("total mass is {mass}, expected 1")]
    MassNotOne { mass: f64 },
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("all samples are equal; the histogram range is degenerate")]
    DegenerateRange,
    #[error("sample {0} is not finite")]
    NonFiniteSample(usize),
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("interval [{lo}, {hi}] is empty")]
    EmptyInterval { lo: f64, hi: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error("potential is not 1-Lipschitz: slope {slope} on piece {piece}")]
    NotLipschitz { piece: usize, slope: f64 },
    #[error("potential needs matching knots and values with at least one knot")]
    MalformedPotential,
    #[error("plan marginals deviate from the grid marginals by {deviation} (L1)")]
    MarginalMismatch { deviation: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitPlanError {
    #[error("F_mu - F_nu changes sign inside [{lo}, {hi}]")]
    RegionNotSignDefinite { lo: f64, hi: f64 },
    #[error("F_mu - F_nu vanishes at interior point {at}")]
    SingularIntegral { at: f64 },
    #[error("region [{lo}, {hi}] is a Zero region and carries no factor")]
    UnsignedRegion { lo: f64, hi: f64 },
    #[error("point ({x}, {y}) lies outside the factor interval")]
    OutsideInterval { x: f64, y: f64 },
    #[error("limit functional is infinite")]
    InfiniteEntropy,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("eps must be positive and finite, got {0}")]
    NonpositiveEps(f64),
    #[error("grid needs at least {min} cells, got {got}")]
    GridTooSmall { min: usize, got: usize },
    #[error("grid marginals must be nonnegative with unit mass")]
    InvalidMarginals,
    #[error("brute-force oracle supports n <= {max}, got {got}")]
    OracleTooLarge { max: usize, got: usize },
    #[error("support mask admits no feasible plan (residual {residual} stalled)")]
    Infeasible { residual: f64 },
    #[error("plan dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("oracle Newton iteration failed to converge (gradient {0})")]
    OracleDiverged(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("eps list must be nonempty, strictly decreasing and positive")]
    BadEpsList,
    #[error("expansion fit needs at least 3 records, got {0}")]
    InsufficientRecords(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    LimitPlan(#[from] LimitPlanError),
}
