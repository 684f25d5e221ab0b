use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dsp::DspError;
use crate::harness::HarnessError;
use crate::ingest::IngestError;
use crate::model::ModelError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True when training stopped on a non-finite loss or activation.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Harness(HarnessError::Divergence { .. }) | Error::Model(ModelError::NonFinite(_))
        )
    }
}
