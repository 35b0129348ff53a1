use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: empty cell (missing values are not supported)")]
    EmptyCell { row: usize, column: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} is rank deficient (numerical rank {rank} of {cols} columns)")]
    RankDeficient {
        what: String,
        rank: usize,
        cols: usize,
    },

    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(String),

    #[error("degenerate identification: x'Z Omega Z'x = {0:e} is not positive")]
    DegenerateIdentification(f64),

    #[error(
        "reduced-form and first-stage residuals are (nearly) perfectly correlated \
         (1 - rho^2 = {0:e}); the least-squares benchmark requires a positive definite Sigma_v"
    )]
    PerfectCorrelation(f64),

    #[error("benchmark bias radicand is {radicand:e} at beta = {beta}; W_Omega is on the perfect-dependence boundary")]
    BenchmarkRadicand { beta: f64, radicand: f64 },

    #[error("B(W_Omega) = {0} exceeds the bound of 1 for the MOP benchmark; the W estimate is broken")]
    MopBoundExceeded(f64),

    #[error(
        "two-step GMM weights depend on a first-step estimate of beta, which does not converge \
         under weak-instrument asymptotics; only fixed (data-dependent but beta-free) weight matrices are supported"
    )]
    TwoStepGmm,

    #[error("the simplified conservative test is only valid under the MOP benchmark (B_LS can exceed 1)")]
    ConservativeUnderLs,

    #[error("design: {0}")]
    Design(String),

    #[error("group {group} is empty after {attempts} generation attempts")]
    EmptyGroup { group: usize, attempts: usize },

    #[error("random design search accepted {accepted} of {wanted} designs after {draws} draws")]
    SamplingTimeout {
        accepted: usize,
        wanted: usize,
        draws: u64,
    },
}

impl Error {
    /// True for problems with the caller's input (files, columns, options),
    /// false for numerical failures on otherwise valid input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::MissingColumn(_)
                | Error::Parse { .. }
                | Error::EmptyCell { .. }
                | Error::InvalidInput(_)
                | Error::TwoStepGmm
                | Error::ConservativeUnderLs
                | Error::Design(_)
        )
    }
}
