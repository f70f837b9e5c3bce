use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} unsupported (supported: {1})")]
    UnsupportedDimension(usize, &'static str),

    #[error("schedule interleaving violated at p={p}: {detail}")]
    Interleaving { p: u64, detail: String },

    #[error("p={p} below p0={p0} for n={n}, alpha={alpha}")]
    BelowP0 { p: u64, p0: u64, n: usize, alpha: f64 },

    #[error("requested width {want} unachievable: {detail}")]
    Width { want: f64, detail: String },

    #[error("tangency within tolerance {tol} at level value {s}")]
    Tangency { s: f64, tol: f64 },

    #[error("root isolation failed below tol={tol}: {detail}")]
    RootIsolation { tol: f64, detail: String },

    #[error("no admissible cut at level {level} after {retries} jitter retries")]
    CutSearchExhausted { level: usize, retries: usize },

    #[error("collar parameter t={t} exceeds collar depth r0={r0}")]
    CollarDepth { t: f64, r0: f64 },

    #[error("boundary decomposition mismatch: {0}")]
    DecompositionMismatch(String),

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("{0} is not a cell of the requested level")]
    NotACell(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
