//! Semantic-ID engineering for generative recommendation.
//!
//! The crate covers the whole offline path from item embeddings to an
//! evaluated next-item recommender:
//!
//! * [`datamodel`]: item catalogs, embedding files, interaction logs,
//!   k-core filtering and the leave-last-out split.
//! * [`synthgen`]: a seeded generator for catalogs, embeddings and
//!   interaction logs with an enrichment knob.
//! * [`rq`]: residual-quantization codebooks, SID encoding, decoding,
//!   rendering and the catalog trie.
//! * [`diagnostics`]: collision rate, unique ratio, codebook utilization,
//!   prefix entropy, the reconstruction curve and a category probe.
//! * [`corpus`]: the eight-task conversational fine-tuning corpus.
//! * [`recommender`]: sequence models over SID tokens, trie-constrained
//!   beam search and HR@K / NDCG@K evaluation.
//! * [`pipeline`]: the cached four-stage pipeline behind the CLI.

pub mod corpus;
pub mod datamodel;
pub mod diagnostics;
mod error;
pub mod pipeline;
pub mod recommender;
pub mod rng;
pub mod rq;
pub mod synthgen;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/rq.md")]
    mod rq {}
    #[doc = include_str!("../../../book/src/sid.md")]
    mod sid {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/eval.md")]
    mod eval {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
