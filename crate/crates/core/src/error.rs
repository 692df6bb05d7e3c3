use thiserror::Error;

/// Errors raised by the numerical routines of the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input `{key}`: {reason}")]
    InvalidInput { key: String, reason: String },

    #[error("bracket failure: classifier gives `{low}` at c={c_low} and `{high}` at c={c_high}")]
    BracketFailure {
        c_low: f64,
        c_high: f64,
        low: &'static str,
        high: &'static str,
    },

    #[error("integrator step size underflow at x={x} (h={h:e})")]
    StiffnessFailure { x: f64, h: f64 },

    #[error("PDE stability violation at t={t}, x={x}: value {value}")]
    StabilityViolation { t: f64, x: f64, value: f64 },

    #[error("cross-check mismatch: sup-norm gap {gap:e} exceeds {tol:e}")]
    CrossCheckMismatch { gap: f64, tol: f64 },

    #[error("killing function grid [{lo}, {hi}] does not cover |x| <= {needed}")]
    QuadratureUnderflow { lo: f64, hi: f64, needed: f64 },

    #[error("lambda0 = {0} is outside (1/2, 1)")]
    OutOfRange(f64),

    #[error("total mass {mass} exceeded 100 x initial mass {initial}")]
    MassExplosion { mass: f64, initial: f64 },

    #[error("rejection budget exceeded: survival probability {p:e} needs about {required} attempts, budget {budget}")]
    RejectionBudgetExceeded { p: f64, required: u64, budget: u64 },

    #[error("only {survivors} replicates have a finite tau (need {needed})")]
    InsufficientSurvivors { survivors: usize, needed: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt manifest at byte {offset}: {reason}")]
    CorruptManifest { offset: usize, reason: String },

    #[error("run {run_id} already exists with different content")]
    CollisionError { run_id: String },
}

impl LabError {
    pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Self {
        LabError::InvalidInput {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
