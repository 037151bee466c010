//! Cosine similarity and two-stage k-NN evidence ranking.
//!
//! Stage one always selects the top candidates (ten by default) by
//! embedding cosine similarity; stage two re-ranks those candidates with the
//! chosen method, so every method returns a subset of the same candidate
//! pool.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::chunk::EvidenceChunk;
use super::entities::extract_entities;
use crate::backends::{BackendError, ChatBackend, EmbeddingBackend, EmbeddingVector};

/// How candidate evidence is re-ranked after the cosine recall stage.
#[derive(Debug, Clone, PartialEq)]
pub enum RankMethod {
    /// Embedding cosine similarity.
    Ret,
    /// Entity-set similarity (mean entity-name embeddings).
    Nlp,
    /// `(ret + nlp) / 2`.
    Fus,
    /// Seeded random order over the candidate pool.
    Rnd { seed: u64 },
}

impl RankMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RankMethod::Ret => "ret",
            RankMethod::Nlp => "nlp",
            RankMethod::Fus => "fus",
            RankMethod::Rnd { .. } => "rnd",
        }
    }

    pub fn from_name(name: &str, seed: u64) -> Option<Self> {
        match name {
            "ret" => Some(RankMethod::Ret),
            "nlp" => Some(RankMethod::Nlp),
            "fus" => Some(RankMethod::Fus),
            "rnd" => Some(RankMethod::Rnd { seed }),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RankError {
    #[error("embedding dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("cosine of an all-zero vector is undefined")]
    ZeroVector,
    #[error("evidence pool is empty")]
    EmptyPool,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("ranking method `{0}` needs a chat backend for entity extraction")]
    NoEntityExtractor(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Standard cosine similarity, in `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RankError> {
    if a.dimension() != b.dimension() {
        return Err(RankError::DimensionMismatch {
            a: a.dimension(),
            b: b.dimension(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(RankError::ZeroVector);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// Evidence ranker: an embedding backend, an optional chat backend for
/// entity-based similarity, and the candidate pool size.
pub struct Ranker {
    embedder: Arc<dyn EmbeddingBackend>,
    chat: Option<Arc<dyn ChatBackend>>,
    candidate_pool: usize,
    entity_cache: Mutex<HashMap<String, Vec<String>>>,
}

impl Ranker {
    pub fn new(embedder: Arc<dyn EmbeddingBackend>) -> Self {
        Self {
            embedder,
            chat: None,
            candidate_pool: 10,
            entity_cache: Mutex::new(HashMap::new()),
        }
    }

    /// Chat backend used to extract entity names for the `nlp`/`fus`
    /// methods.
    pub fn with_chat(mut self, chat: Arc<dyn ChatBackend>) -> Self {
        self.chat = Some(chat);
        self
    }

    pub fn with_candidate_pool(mut self, size: usize) -> Self {
        self.candidate_pool = size.max(1);
        self
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, RankError> {
        let mut vectors = self.embedder.embed(std::slice::from_ref(&text.to_string()))?;
        vectors.pop().ok_or(RankError::ZeroVector)
    }

    fn ret_score(&self, query: &EmbeddingVector, chunk_vec: &EmbeddingVector) -> Result<f64, RankError> {
        cosine(query, chunk_vec)
    }

    /// Two-stage selection: cosine top candidates, then method-specific
    /// re-ranking. Returns the top `k` (or all candidates when fewer),
    /// scores recorded, ties broken by ascending `chunk_index`.
    pub fn rank_evidence(
        &self,
        query: &str,
        pool: &[EvidenceChunk],
        method: &RankMethod,
        k: usize,
    ) -> Result<Vec<EvidenceChunk>, RankError> {
        if pool.is_empty() {
            return Err(RankError::EmptyPool);
        }
        if k == 0 {
            return Err(RankError::ZeroK);
        }

        let query_vec = self.embed_one(query)?;
        let texts: Vec<String> = pool.iter().map(|c| c.text.clone()).collect();
        let chunk_vecs = self.embedder.embed(&texts)?;

        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(pool.len());
        for (i, vec) in chunk_vecs.iter().enumerate() {
            scored.push((i, self.ret_score(&query_vec, vec)?));
        }
        sort_by_score(&mut scored, pool);
        scored.truncate(self.candidate_pool);

        let mut candidates: Vec<(usize, f64)> = match method {
            RankMethod::Ret => scored,
            RankMethod::Nlp => {
                let mut rescored = Vec::with_capacity(scored.len());
                for (i, ret) in scored {
                    let nlp = self.entity_similarity_inner(query, &pool[i], ret)?;
                    rescored.push((i, nlp));
                }
                sort_by_score(&mut rescored, pool);
                rescored
            }
            RankMethod::Fus => {
                let mut rescored = Vec::with_capacity(scored.len());
                for (i, ret) in scored {
                    let nlp = self.entity_similarity_inner(query, &pool[i], ret)?;
                    rescored.push((i, (ret + nlp) / 2.0));
                }
                sort_by_score(&mut rescored, pool);
                rescored
            }
            RankMethod::Rnd { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut shuffled = scored;
                shuffled.shuffle(&mut rng);
                shuffled.iter_mut().for_each(|(_, s)| *s = 0.0);
                shuffled
            }
        };

        candidates.truncate(k);
        Ok(candidates
            .into_iter()
            .map(|(i, score)| {
                let mut chunk = pool[i].clone();
                chunk.score = score;
                chunk
            })
            .collect())
    }

    /// Cosine of the mean entity-name embeddings of `query` and `chunk`.
    /// Falls back to full-text cosine when either side has no entities.
    pub fn entity_similarity(&self, query: &str, chunk: &EvidenceChunk) -> Result<f64, RankError> {
        let query_vec = self.embed_one(query)?;
        let chunk_vec = self.embed_one(&chunk.text)?;
        let ret = cosine(&query_vec, &chunk_vec)?;
        self.entity_similarity_inner(query, chunk, ret)
    }

    fn entity_similarity_inner(
        &self,
        query: &str,
        chunk: &EvidenceChunk,
        ret_fallback: f64,
    ) -> Result<f64, RankError> {
        let query_names = self.entity_names(query)?;
        let chunk_names = self.entity_names(&chunk.text)?;
        if query_names.is_empty() || chunk_names.is_empty() {
            return Ok(ret_fallback);
        }
        let a = self.mean_embedding(&query_names)?;
        let b = self.mean_embedding(&chunk_names)?;
        match cosine(&a, &b) {
            Ok(v) => Ok(v),
            // Degenerate cancellation in a mean vector: treat as no signal.
            Err(RankError::ZeroVector) => Ok(ret_fallback),
            Err(e) => Err(e),
        }
    }

    fn entity_names(&self, text: &str) -> Result<Vec<String>, RankError> {
        if let Some(names) = self.entity_cache.lock().expect("entity cache").get(text) {
            return Ok(names.clone());
        }
        let chat = self
            .chat
            .as_ref()
            .ok_or(RankError::NoEntityExtractor("nlp"))?;
        let names: Vec<String> = extract_entities(text, chat.as_ref())?
            .into_iter()
            .map(|m| m.name)
            .collect();
        self.entity_cache
            .lock()
            .expect("entity cache")
            .insert(text.to_string(), names.clone());
        Ok(names)
    }

    fn mean_embedding(&self, texts: &[String]) -> Result<EmbeddingVector, RankError> {
        let vectors = self.embedder.embed(texts)?;
        let dim = vectors.first().map(|v| v.dimension()).unwrap_or(0);
        let mut mean = vec![0.0f64; dim];
        for v in &vectors {
            if v.dimension() != dim {
                return Err(RankError::DimensionMismatch {
                    a: dim,
                    b: v.dimension(),
                });
            }
            for (m, x) in mean.iter_mut().zip(v.values()) {
                *m += x;
            }
        }
        let n = vectors.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(EmbeddingVector::new(mean))
    }
}

/// Descending score; ties broken by ascending chunk index, then pool order.
fn sort_by_score(scored: &mut [(usize, f64)], pool: &[EvidenceChunk]) {
    scored.sort_by(|(ia, sa), (ib, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| pool[*ia].chunk_index.cmp(&pool[*ib].chunk_index))
            .then_with(|| ia.cmp(ib))
    });
}
