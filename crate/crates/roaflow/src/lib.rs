//! Data-driven analysis of nonlinear autonomous systems from trajectory data.
//!
//! The crate fits the best linear vector field to a trajectory of a nonlinear
//! system via trajectory Gram matrices, derives a residual-energy diagnostic
//! from the misfit against the Jacobian at the origin, and evolves a closed
//! planar curve under a residual-energy-driven geometric flow to estimate the
//! region of attraction of a locally exponentially stable equilibrium.
//!
//! Modules, roughly bottom-up:
//!
//! * [`systems`] — vector-field abstraction and the built-in benchmarks.
//! * [`integrator`] — adaptive Dormand–Prince integration with uniform-grid
//!   resampling, plus CSV persistence and derivative reconstruction.
//! * [`estimator`] — trajectory Gram matrices, persistency-of-excitation
//!   checks, and the linear minimizer (direct solve, gradient matrix flow,
//!   and the sampled-data pseudo-inverse form).
//! * [`energy`] — residual energy of an initial condition against a reference
//!   Jacobian, with a data-driven near-origin Jacobian surrogate.
//! * [`boundary`] — discretized closed-curve geometric flow driven by the
//!   squashed residual energy.
//! * [`oracle`] — independent ground truth for tests: trajectory-based
//!   membership, a reference limit cycle, and Hausdorff distance.
//!
//! Per-point and per-probe evaluations run on rayon when the `parallel`
//! feature (default) is enabled; a sequential fallback is compiled otherwise.
//! Results are collected in input order either way, so outputs are identical
//! across thread counts.

pub mod boundary;
pub mod energy;
pub mod estimator;
pub mod exec;
pub mod integrator;
pub mod oracle;
pub mod systems;

mod textio;

pub use boundary::{BoundaryCurve, FlowConfig, FlowOutcome, FlowStatus};
pub use energy::{ARefSource, EnergyConfig, EnergyStatus, ResidualEnergy};
pub use estimator::{ExcitationReport, GramMatrices, LinearEstimate, QuadratureRule};
pub use integrator::{IntegrationControls, Termination, Trajectory};
pub use oracle::Membership;
pub use systems::VectorField;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown system id `{0}`")]
    UnknownSystem(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-increasing times at row {row}")]
    NonIncreasingTimes { row: usize },
    #[error("non-uniform sample spacing at index {index}")]
    NonUniformGrid { index: usize },
    #[error("trajectory too short: {got} samples, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("trajectory has no derivatives; reconstruct them first")]
    MissingDerivatives,
    #[error(
        "persistency of excitation failed: lambda_min(Gamma2) = {lambda_min:.6e} <= {tol:.6e}"
    )]
    ExcitationFailure { lambda_min: f64, tol: f64 },
    #[error("state matrix is rank deficient: rank {rank} < {need}")]
    RankDeficient { rank: usize, need: usize },
    #[error("gradient flow stalled after {iters} iterations (residual {residual:.6e})")]
    GradientFlowStalled { iters: usize, residual: f64 },
    #[error("gram matrices carry no Gamma0 term; the residual cost is undefined")]
    MissingGamma0,
    #[error("jacobian at the origin is unavailable for system `{0}`")]
    JacobianUnavailable(String),
    #[error("all {0} probe estimates failed the excitation check")]
    AllProbesFailed(usize),
    #[error("boundary curve needs at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("degenerate point spacing at index {0}; resample the curve")]
    DegenerateSpacing(usize),
    #[error("curve folded (self-intersection) at iteration {iteration}")]
    CurveFolded { iteration: usize },
    #[error("energy evaluation failed on every curve point")]
    EnergyEvaluationFailed,
    #[error("limit-cycle period detection failed: {0}")]
    PeriodDetection(&'static str),
    #[error("negative value {0} is not a valid energy")]
    NegativeEnergy(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
