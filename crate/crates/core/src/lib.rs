//! Agentic retrieval-augmented question answering over large structured
//! document corpora.
//!
//! The crate is organised along the request path:
//!
//! - [`ingest`]: document loading, recursive chunking, table views, directory sync
//! - [`gateway`]: embedding, generation and pair-scoring backends (HTTP and mock)
//! - [`index`]: dense (exact / HNSW) and BM25 sparse indexes over one chunk set
//! - [`retriever`]: HyDE and Multi-HyDE retrieval with a BM25 arm and reranking
//! - [`agent`]: the meta-plan tool loop with clarification support
//! - [`tools`]: calculator, web search, FX rates, market data, filings
//! - [`eval`]: faithfulness / factual correctness / ROUGE / cosine metrics and
//!   the benchmark runner
//! - [`pipeline`]: wiring of the above from a [`config::PipelineConfig`]

pub mod agent;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod index;
pub mod ingest;
pub mod pipeline;
pub mod prompts;
pub mod retriever;
pub mod text;
pub mod tools;

pub use agent::{AgentState, Budgets, Event, MetaPlan};
pub use gateway::{EmbeddingVector, Gateway};
pub use index::{HybridIndex, ScoredCandidate};
pub use ingest::{Chunk, ChunkKind, SourceDocument};
pub use retriever::{ContextSet, RetrievalConfig, RetrievalMode};
