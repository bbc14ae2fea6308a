use thiserror::Error;

use crate::ids::{Power, ProvinceId, UnitId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("unknown unit {0}")]
    UnknownUnit(UnitId),

    #[error("unknown power {0}")]
    UnknownPower(Power),

    #[error("unknown province {0}")]
    UnknownProvince(ProvinceId),

    #[error("illegal order for {unit}: {order}")]
    IllegalOrder { unit: UnitId, order: String },

    #[error("no order given for unit {0}")]
    MissingOrder(UnitId),

    #[error("round {round}: {message}")]
    Round { round: usize, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input (as opposed to runtime failures).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::UnknownUnit(_)
                | Error::UnknownPower(_)
                | Error::UnknownProvince(_)
                | Error::IllegalOrder { .. }
                | Error::MissingOrder(_)
                | Error::Round { .. }
                | Error::Precondition(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
