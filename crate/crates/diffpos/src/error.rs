use thiserror::Error;

/// Errors shared by all modules.
///
/// Verdicts (PASS/FAIL/INCONCLUSIVE) are never errors; these are raised only
/// when an evaluation cannot produce a meaningful number at all.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector field, Jacobian or metric evaluation produced a non-finite entry.
    #[error("non-finite value in {context} at coordinate {coordinate}")]
    Evaluation { context: String, coordinate: usize },

    /// A trajectory left the representable range before the horizon.
    #[error("trajectory diverged (non-finite state) at t = {time}")]
    Divergence { time: f64 },

    /// The normalized flow drifted off the unit sphere; the step size is too large.
    #[error("unit-norm drift {drift:.3e} exceeded 1e-6 at t = {time}; reduce the step size")]
    Normalization { time: f64, drift: f64 },

    /// A cone constructor rejected its generators.
    #[error("cone construction failed: {0}")]
    ConeConstruction(String),

    /// The constraint set admits no strictly feasible direction.
    #[error("infeasible cone: estimated maximal margin {margin:.3e} <= 0")]
    InfeasibleCone { margin: f64 },

    /// Zero tangent vectors are excluded from every cone operation.
    #[error("degenerate (zero) tangent vector")]
    DegenerateVector,

    /// An operation's stated precondition does not hold for the inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The phase centroid is too short to define a mean phase.
    #[error("phase centroid magnitude {rho:.3e} < 1e-12; mean phase undefined")]
    PhaseBalanced { rho: f64 },

    /// Mismatched dimensions between model, cone, region or vectors.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
