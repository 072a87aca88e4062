//! Corpus-to-synthetic-dataset pipeline: document filtering, concept
//! extraction, concept-graph sampling, multi-level question generation and
//! answer generation, plus a scaling-law fitter for deciding how many
//! synthetic tokens a target error rate needs.

pub mod concept;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod filter;
pub mod forest;
pub mod graph;
pub mod hashing;
mod http;
pub mod llmio;
pub mod pipeline;
pub mod prompts;
pub mod qagen;
pub mod scaling;

pub use error::{Error, Result};
pub use http::RetryPolicy;
