use std::path::PathBuf;

/// Errors produced by the modelling, training and control pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration produced a non-finite state at t = {time}")]
    IntegrationBlowup { time: f64 },

    #[error("time samples are not uniformly spaced (relative jitter {jitter:.3e})")]
    UnsupportedGrid { jitter: f64 },

    #[error("Gram matrix is not positive definite (last jitter tried: {jitter:.1e})")]
    IndefiniteGram { jitter: f64 },

    #[error("training failed: {0}")]
    TrainingFailed(String),

    #[error("input matrix has rank {rank}, expected {expected}; no full-rank left annihilator")]
    NoAnnihilator { rank: usize, expected: usize },

    #[error("state-dependent input matrices are not supported by the controller")]
    StateDependentInput,

    #[error("no stationary point of the desired Hamiltonian was found")]
    DesignInfeasible,

    #[error("stationary point {point:?} is not a minimum (smallest Hessian eigenvalue {min_eigenvalue:.3e})")]
    SaddleRejected { point: Vec<f64>, min_eigenvalue: f64 },

    #[error("G^T G is singular at {point:?}")]
    RankLoss { point: Vec<f64> },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}
