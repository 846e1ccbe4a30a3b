//! Central numerical tolerances.
//!
//! Every floating-point comparison in the crate goes through one of these
//! constants so that the accuracy contract lives in a single place. The
//! values are deliberate choices, not defaults: loosening one of them is an
//! accuracy decision that should be reviewed, not an incidental edit.

/// Relative cutoff for singular values when extracting a numerical nullspace
/// from a sampled linear system: singular values below `NULLSPACE_SV_REL *
/// sigma_max` are treated as zero.
pub const NULLSPACE_SV_REL: f64 = 1e-9;

/// A candidate nullspace vector must keep the compatibility residual below
/// this bound at fresh sample points (points not used to build the system).
pub const NULLSPACE_FRESH_RESIDUAL: f64 = 1e-9;

/// Relative cutoff for singular values in the functional-independence rank
/// test on stacked phase-space gradients.
pub const RANK_SV_REL: f64 = 1e-8;

/// Relative tolerance for the sampled constant-curvature check
/// `R_{hlij} = K (g_{jl} g_{hi} - g_{il} g_{hj})`.
pub const CURVATURE_REL: f64 = 1e-9;

/// Probabilistic expression-equality test: relative agreement required at
/// each random complex sample point.
pub const EQUIV_EVAL_REL: f64 = 1e-10;

/// Number of random complex points used by the probabilistic equality test.
pub const EQUIV_EVAL_POINTS: usize = 20;

/// Poisson-bracket residual bound for certifying a first integral, relative
/// to the magnitude of the bracket's individual terms (so cancellation depth
/// is measured, not absolute size).
pub const BRACKET_RESIDUAL: f64 = 1e-9;

/// Exact-identity checks evaluated in floating point (the `gamma` ODE, the
/// derivative relation `Ck = d/dx Sk`, printed-formula spot checks).
pub const IDENTITY_EVAL: f64 = 1e-12;

/// Default adaptive-integrator tolerance for conservation-drift runs.
pub const INTEGRATOR_TOL: f64 = 1e-10;

/// Conservation drift bound over the standard T = 10 verification window at
/// `INTEGRATOR_TOL`.
pub const DRIFT_BOUND: f64 = 1e-6;

/// When an evaluated quantity is supposed to be real, its imaginary part must
/// stay below this fraction of the magnitude.
pub const IMAG_DUST: f64 = 1e-9;

/// Margin by which sample points must clear every declared singular
/// expression of a chart or potential (|s(q)| >= this).
pub const SINGULAR_MARGIN: f64 = 5e-2;

/// Rejection bound: a sample point is discarded when any evaluated quantity
/// exceeds this magnitude (the point is too close to a pole to be useful).
pub const SAMPLE_MAGNITUDE_CAP: f64 = 1e8;

/// Cosine-similarity gap for matching a numerically computed solution space
/// against a predicted one: the projection must agree to within this of 1.
pub const TABLE_COSINE: f64 = 1e-8;

/// Relative residual allowed when projecting a predicted direction onto a
/// sampled function basis by least squares.
pub const PROJECTION_RESIDUAL: f64 = 1e-8;

/// A certified independence rank must separate kept from discarded singular
/// values by at least this ratio.
pub const RANK_GAP_REQUIRED: f64 = 1e6;
