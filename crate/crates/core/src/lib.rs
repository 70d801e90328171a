//! Duplication detection for project proposals.
//!
//! The pipeline screens a reference corpus with embedding-based preliminary
//! retrieval, narrows the candidates to the five most relevant references
//! through a round-robin multi-agent debate tournament, and produces dual
//! feedback: a 1-10 duplication score plus a similarity conclusion with
//! validated original-text span comparisons.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`corpus`] — document ingestion, desensitization, and the project store
//! - [`lexical`] — tokenization and the ROUGE-L / BM25 word-frequency scorers
//! - [`embedding`] — embedder interface and the cosine-similarity index
//! - [`provider`] — chat-completion abstraction with retries, mocks, and
//!   token accounting
//! - [`prompts`] — placeholder-based prompt templates
//! - [`tournament`] — pool partition, sub-competition scheduling, debates,
//!   and vote aggregation
//! - [`feedback`] — duplication score, similarity conclusion, and span
//!   comparisons
//! - [`eval`] — retrieval/scoring metrics, baseline competition formats,
//!   sweeps, and the noisy-judge simulation harness
//! - [`pipeline`] — end-to-end detection runs
//! - [`config`] — run configuration file with environment overrides

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod feedback;
pub mod journal;
pub mod lexical;
pub mod pipeline;
pub mod prompts;
pub mod provider;
pub mod tournament;
