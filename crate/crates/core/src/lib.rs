//! Fine-grained hallucination detection and editing for model-generated text.
//!
//! The crate is organized around five subsystems:
//!
//! - [`annotation`]: the tag-annotated document grammar (six hallucination
//!   types), with a parser, serializer, and label extraction.
//! - [`backends`]: chat-completion and embedding access behind traits, with
//!   an OpenAI-compatible HTTP client and deterministic mocks for tests.
//! - [`retrieval`]: evidence recall (entity extraction, MediaWiki search,
//!   infobox conversion) and ranking (chunking, embeddings, k-NN selection).
//! - [`pipeline`]: the sentence-by-sentence detection and editing engine,
//!   driven by a staged decision tree and a repository of edited context.
//! - [`evaluation`]: per-type F1, support-weighted overall F1, binary F1,
//!   report rendering, and ablation sweeps.

pub mod annotation;
pub mod backends;
pub mod evaluation;
pub mod pipeline;
pub mod retrieval;
pub mod text;
