//! Group-robust last-layer adaptation on frozen embeddings.
//!
//! A frozen linear head is corrected by a low-rank additive term learned in
//! the span of the top eigenvectors of a loss-weighted embedding covariance.
//! ERM and Group DRO heads serve as baselines; [`dataset::generate_synthetic`]
//! provides a benchmark with a latent group that Group DRO cannot see.
//!
//! Module map:
//!
//! * [`linalg`]: softmax, cross-entropy, weighted covariance, Jacobi eigensolver, CEV
//! * [`dataset`]: embedding datasets, LEMB/TSV files, splits, synthetic generator
//! * [`heads`]: linear heads, exact gradients, ERM and Group DRO trainers
//! * [`leia`]: example weights, error subspace, adjustment fitting, rank selection
//! * [`eval`]: group metrics, subgroup risk, model-selection regimes
//! * [`analysis`]: CEV tables and error-eigenbasis projections
//! * [`experiment`]: the two-stage pipeline and the synthetic sweep

pub mod analysis;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod fmt;
pub mod heads;
pub mod leia;
pub mod linalg;
pub mod textio;

use thiserror::Error;

pub use dataset::{EmbeddingDataset, Format};
pub use heads::{LinearHead, TrainConfig};
pub use leia::{LeiaConfig, LeiaModel};
pub use linalg::DenseMatrix;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Head(#[from] heads::HeadError),
    #[error(transparent)]
    Leia(#[from] leia::LeiaError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage { stage, source: Box::new(e) }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Linalg(e) => linalg_kind(e),
            Error::Dataset(e) => match e {
                dataset::DatasetError::Split(_) | dataset::DatasetError::Synthetic(_) => ErrorKind::Config,
                _ => ErrorKind::Data,
            },
            Error::Head(e) => head_kind(e),
            Error::Leia(e) => match e {
                leia::LeiaError::Config(_) => ErrorKind::Config,
                leia::LeiaError::NoErrorStructure | leia::LeiaError::Diverged { .. } => ErrorKind::Numerical,
                leia::LeiaError::Linalg(e) => linalg_kind(e),
                leia::LeiaError::Head(e) => head_kind(e),
                _ => ErrorKind::Data,
            },
            Error::Eval(_) => ErrorKind::Data,
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

fn linalg_kind(e: &linalg::LinalgError) -> ErrorKind {
    use linalg::LinalgError::*;
    match e {
        RankOutOfRange { .. } => ErrorKind::Config,
        NonFinite { .. } | NotSymmetric { .. } | ZeroSpectrum | NoConvergence { .. } => ErrorKind::Numerical,
        _ => ErrorKind::Data,
    }
}

fn head_kind(e: &heads::HeadError) -> ErrorKind {
    use heads::HeadError::*;
    match e {
        Config(_) => ErrorKind::Config,
        Diverged { .. } => ErrorKind::Numerical,
        Linalg(e) => linalg_kind(e),
        _ => ErrorKind::Data,
    }
}
