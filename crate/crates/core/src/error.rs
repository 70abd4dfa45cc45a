use thiserror::Error;

/// Errors produced by the numerical pipeline.
///
/// The variants map onto the CLI exit codes: `Config` -> 1, `AuditFailed` -> 2,
/// `NonConvergence` -> 3, everything numeric -> 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("audit failed: {0}")]
    AuditFailed(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// The restricted linearization lost invertibility at a concrete vertex.
    /// Carries the doubled-lattice vertex `(n, j, sector)` nearest to the null
    /// direction so the harness can report it against the resonance audits.
    #[error("resonance failure at vertex (n={n:?}, j={j}, sector={sector}): {detail}")]
    ResonanceFailure {
        n: Vec<i64>,
        j: i64,
        sector: u8,
        detail: String,
    },

    #[error("fit undefined: {0}")]
    FitUndefined(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
