use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("requested rank {requested} exceeds the bound {bound}")]
    RankTooLarge { requested: usize, bound: usize },

    #[error("input contains non-finite entries")]
    NonFinite,

    #[error("reference data has zero norm")]
    ZeroNorm,

    #[error("column {column} has zero norm but a nonzero projection")]
    DegenerateColumn { column: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("interpolation matrix is singular at selection step {step}")]
    SingularInterpolation { step: usize },

    #[error("nonlinear solve did not converge at step {step} (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("singular step matrix at step {step}; retry with a time step below {suggested_dt:e}")]
    SingularStep { step: usize, suggested_dt: f64 },

    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
