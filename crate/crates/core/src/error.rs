use thiserror::Error;

use crate::instance::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid instance: {0}")]
    Invalid(Violation),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("infeasible move: {0}")]
    InfeasibleMove(String),
    #[error("invalid switch: {0}")]
    InvalidSwitch(String),
    #[error("member set of {size} units exceeds the oracle limit of {limit}")]
    OracleTooLarge { size: usize, limit: usize },
    #[error("degenerate geometry in district {district}: area {area}, perimeter {perimeter}")]
    DegenerateGeometry {
        district: usize,
        area: f64,
        perimeter: f64,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
