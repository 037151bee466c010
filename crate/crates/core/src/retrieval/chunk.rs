//! Greedy sentence-preserving chunker for evidence text.

use serde::{Deserialize, Serialize};

use crate::text::{split_sentences, token_count};

/// A scored segment of retrieved factual text with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceChunk {
    pub text: String,
    pub source_title: String,
    pub chunk_index: usize,
    pub token_count: usize,
    /// Similarity score set during ranking; 0 until then.
    pub score: f64,
    /// Set when a single sentence exceeded the chunk size and became its
    /// own over-budget chunk.
    pub oversized: bool,
}

impl EvidenceChunk {
    pub fn with_source(mut self, title: impl Into<String>) -> Self {
        self.source_title = title.into();
        self
    }
}

/// Packs whole sentences greedily into chunks of at most `size`
/// whitespace-delimited tokens. Sentences are never split: one longer than
/// `size` becomes its own chunk, flagged oversized. Sentences within a chunk
/// are joined with single spaces, so no sentence is lost or duplicated.
pub fn chunk_text(text: &str, size: usize) -> Vec<EvidenceChunk> {
    assert!(size > 0, "chunk size must be positive");
    let sentences = split_sentences(text).sentences;
    let mut chunks: Vec<EvidenceChunk> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut current_tokens = 0usize;

    let flush = |sentences: &mut Vec<&str>, tokens: &mut usize, chunks: &mut Vec<EvidenceChunk>| {
        if sentences.is_empty() {
            return;
        }
        let text = sentences.join(" ");
        chunks.push(EvidenceChunk {
            text,
            source_title: String::new(),
            chunk_index: chunks.len(),
            token_count: *tokens,
            score: 0.0,
            oversized: sentences.len() == 1 && *tokens > size,
        });
        sentences.clear();
        *tokens = 0;
    };

    for sentence in &sentences {
        let tokens = token_count(sentence);
        if tokens > size {
            flush(&mut current, &mut current_tokens, &mut chunks);
            current.push(sentence);
            current_tokens = tokens;
            flush(&mut current, &mut current_tokens, &mut chunks);
            continue;
        }
        if current_tokens + tokens > size {
            flush(&mut current, &mut current_tokens, &mut chunks);
        }
        current.push(sentence);
        current_tokens += tokens;
    }
    flush(&mut current, &mut current_tokens, &mut chunks);
    chunks
}
