use thiserror::Error;

use crate::atssnet::ModelError;
use crate::embstore::CorpusError;
use crate::metrics::MetricError;
use crate::ndauto::TensorError;
use crate::optim::OptimError;
use crate::simlat::SimilarityError;
use crate::synthgen::SynthError;

/// Any failure surfaced by the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
