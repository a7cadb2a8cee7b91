//! Federated sequential recommendation with hybrid retrieval and
//! chat-based re-ranking.
//!
//! The pipeline has two stages. Stage 1 trains an ID-based recurrent
//! retriever and a text-based dense retriever on user-disjoint federated
//! clients, aggregates both with size-weighted averaging, and fuses their
//! softmax-normalized scores into a top-N candidate pool. Stage 2 prompts a
//! chat-completion backend to re-rank the pool, parses the free-text reply
//! by fuzzy title matching, and falls back to the stage-1 order whenever the
//! generation is unusable — re-ranked output is always a permutation of the
//! retrieved candidates, never anything invented.
//!
//! The [`harness`] module ties everything into seeded, byte-reproducible
//! experiments; `fedrag-cli` exposes them as subcommands.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod hybrid;
pub mod id_retriever;
pub mod metrics;
pub mod optim;
pub mod rerank;
pub mod rng;
pub mod text_retriever;

pub use error::{Error, Result};
