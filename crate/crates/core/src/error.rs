use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state {state:?} is outside the domain of `{plant}`")]
    Domain { plant: String, state: Vec<f64> },

    #[error("decoupling term {value:e} is below the singularity tolerance")]
    SingularDecoupling { value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("state left the plant domain at t = {t}")]
    DomainExit { t: f64 },

    #[error("demonstrations are affinely dependent at t = {t} (condition number {cond:e})")]
    AffineDependence { t: f64, cond: f64 },

    #[error("time {t} is outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("`{0}` is not feedback linearizable; use the embedding pipeline")]
    NotFeedbackLinearizable(String),

    #[error("degenerate point set: {0}")]
    Degenerate(String),

    #[error("point lies outside the convex hull")]
    NotInHull,

    #[error("embedding is singular: |r| = {r:e}{}{}", t.map(|t| format!(" at t = {t}")).unwrap_or_default(), demo.map(|d| format!(" in demonstration {d}")).unwrap_or_default())]
    SingularEmbedding {
        r: f64,
        t: Option<f64>,
        demo: Option<usize>,
    },

    #[error("recording from x0 = {x0:?} failed: {source}")]
    Recording {
        x0: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
