use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("layout infeasible: no placement of {n_sats} footprints of {cells_per_sat} cells covers exactly {n_cells_total} cells")]
    LayoutInfeasible {
        n_sats: usize,
        cells_per_sat: usize,
        n_cells_total: usize,
    },

    #[error("unknown cell id {0}")]
    UnknownCell(usize),

    #[error("beam {beam} of satellite {sat} is not active")]
    BeamInactive { sat: usize, beam: usize },

    #[error("invalid traffic configuration: {0}")]
    InvalidTraffic(String),

    #[error("negative service capacity {0}")]
    NegativeCapacity(f64),

    #[error("training window {window} exceeds trace length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("empty sweep: no values given for axis {0}")]
    EmptySweep(String),

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidScenario(_) => "invalid_scenario",
            Error::LayoutInfeasible { .. } => "layout_infeasible",
            Error::UnknownCell(_) => "unknown_cell",
            Error::BeamInactive { .. } => "beam_inactive",
            Error::InvalidTraffic(_) => "invalid_traffic",
            Error::NegativeCapacity(_) => "negative_capacity",
            Error::WindowTooLong { .. } => "window_too_long",
            Error::EmptySweep(_) => "empty_sweep",
            Error::UnknownPolicy(_) => "unknown_policy",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
