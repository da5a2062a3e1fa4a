use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative order {order} exceeds the supported maximum {lmax}")]
    OrderTooHigh { order: usize, lmax: usize },

    #[error("sampled data too coarse for order-{order} differentiation (spectral tail fraction {tail:.2e})")]
    NotDifferentiable { order: usize, tail: f64 },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("PSF derivatives numerically linearly dependent at order {order} (residual ratio {residual:.2e})")]
    LinearDependence { order: usize, residual: f64 },

    #[error("scene contains no points")]
    EmptyScene,

    #[error("cannot rescale a zero-size shape")]
    ZeroSizeShape,

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("grid is not symmetric about {0}")]
    AsymmetricGrid(f64),

    #[error("pixel width {width} is below the grid spacing {spacing}")]
    PixelTooSmall { width: f64, spacing: f64 },

    #[error("outcome kind not supported by this operation: {0}")]
    UnsupportedBase(String),

    #[error("scene centroid {scene} does not match the measurement frame {frame}")]
    CentroidFrameMismatch { scene: f64, frame: f64 },

    #[error("image size {s} is not below the series convergence bound {r0}")]
    OutsideConvergenceRadius { s: f64, r0: f64 },

    #[error("photon-number truncation failed: {0}")]
    TruncationFailure(String),

    #[error("moment pattern not supported: {0}")]
    UnsupportedPattern(String),

    #[error("outcome `{0}` has zero probability but a nonzero derivative")]
    SingularProbability(String),

    #[error("even moment M_{0} vanishes; the odd-moment limit formula is undefined")]
    ZeroEvenMoment(usize),

    #[error("correlation beta = {0} lies outside [-1, 1]")]
    InvalidBeta(f64),

    #[error("PSF is anisotropic (dkx = {dkx}, dky = {dky}); this form requires dkx = dky")]
    AnisotropicPsf { dkx: f64, dky: f64 },

    #[error("scene is degenerate for this analysis: {0}")]
    DegenerateScene(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("parameter M_{0} is not identifiable from this measurement model")]
    NonIdentifiable(usize),

    #[error("PSF violates the derivative-orthogonality assumption at order {order} (residual {residual:.2e})")]
    AssumptionViolated { order: usize, residual: f64 },

    #[error("need at least {need} grid points, got {got}")]
    InsufficientGrid { need: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
