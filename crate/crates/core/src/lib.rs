//! Detection of AI-generated video from anomalous temporal self-similarity.
//!
//! The pipeline runs on precomputed per-frame embeddings:
//!
//! 1. [`embstore`] loads a corpus of labelled videos, each carrying a `T x d`
//!    visual and a `T x d` textual (caption) embedding matrix.
//! 2. [`simlat`] turns one record into three `T x T` cosine self-similarity
//!    matrices: visual, textual and cross-modal.
//! 3. [`atssnet`] encodes each matrix with its own Transformer encoder, fuses
//!    the three branches with cross-attention, pools, and classifies.
//! 4. [`optim`] trains the network with Adam and a plateau scheduler;
//!    [`metrics`] scores it with AP, ROC-AUC and accuracy.
//!
//! [`synthgen`] produces synthetic corpora with the real/fake dichotomy baked
//! in, and [`ndauto`] is the small reverse-mode autodiff engine underneath the
//! network.
//!
//! ```
//! use atss::synthgen::{generate, SynthConfig};
//! use atss::simlat::build_triplet;
//!
//! let corpus = generate(&SynthConfig { n_real: 2, n_fake: 2, ..SynthConfig::default() }).unwrap();
//! let triplet = build_triplet(&corpus.records()[0]).unwrap();
//! assert_eq!(triplet.frames(), 8);
//! ```

pub mod atssnet;
pub mod embstore;
mod error;
mod fsutil;
pub mod metrics;
pub mod ndauto;
pub mod optim;
pub mod simlat;
pub mod synthgen;

pub use error::{Error, Result};
pub use fsutil::atomic_write;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/similarity.md")]
    mod similarity {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
}
