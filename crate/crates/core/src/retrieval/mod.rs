//! Evidence retrieval: the Recall phase (entities → wiki articles →
//! infobox statements → chunks) and the Ranking phase (embedding similarity
//! → candidate pool → k-NN selection).

mod chunk;
mod entities;
mod infobox;
mod rank;
mod wiki;

pub use chunk::{chunk_text, EvidenceChunk};
pub use entities::{extract_entities, EntityMention};
pub use infobox::{infobox_to_statements, parse_infobox, Infobox};
pub use rank::{cosine, RankError, RankMethod, Ranker};
pub use wiki::{Article, WikiClient, WikiError, DEFAULT_API_URL};

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ChatBackend;

/// Query granularity for evidence selection. Document-level ranks once for
/// the whole passage (every sentence cites the same evidence);
/// sentence-level re-ranks per sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelKind {
    Document,
    Sentence,
}

impl LevelKind {
    pub fn name(&self) -> &'static str {
        match self {
            LevelKind::Document => "document",
            LevelKind::Sentence => "sentence",
        }
    }
}

/// Retrieval granularity plus the chunk size it implies (600 tokens at
/// document level, 300 at sentence level, overridable).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalLevel {
    pub kind: LevelKind,
    pub chunk_size: usize,
}

impl RetrievalLevel {
    pub fn document() -> Self {
        Self {
            kind: LevelKind::Document,
            chunk_size: 600,
        }
    }

    pub fn sentence() -> Self {
        Self {
            kind: LevelKind::Sentence,
            chunk_size: 300,
        }
    }

    pub fn with_chunk_size(mut self, size: usize) -> Self {
        assert!(size > 0, "chunk size must be positive");
        self.chunk_size = size;
        self
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Wiki(#[from] WikiError),
    #[error(transparent)]
    Backend(#[from] crate::backends::BackendError),
}

/// Per-title record of what the Recall phase fetched.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub entity: String,
    pub title: String,
    pub has_infobox: bool,
    pub body_chunks: usize,
    pub infobox_statements: usize,
}

/// The assembled evidence pool for one document.
#[derive(Debug, Clone, Default)]
pub struct EvidenceCorpus {
    pub chunks: Vec<EvidenceChunk>,
    pub manifest: Vec<ManifestEntry>,
}

/// Recall phase: extract key entities, search the wiki for each, fetch the
/// top titles, convert infoboxes to declarative statements, and chunk
/// everything. Entities without coverage (no search hits, missing pages,
/// fixture misses) are skipped with a warning; chat-backend failures
/// propagate.
pub fn assemble_corpus(
    document: &str,
    chat: &dyn ChatBackend,
    wiki: &WikiClient,
    titles_per_entity: usize,
    chunk_size: usize,
    jobs: usize,
) -> Result<EvidenceCorpus, RetrievalError> {
    let mentions = extract_entities(document, chat)?;
    let fetched = fetch_entity_articles(&mentions, wiki, titles_per_entity, jobs);

    let mut corpus = EvidenceCorpus::default();
    for (entity, articles) in fetched {
        for article in articles {
            let mut body_chunks = chunk_text(&article.body, chunk_size);
            for c in &mut body_chunks {
                c.source_title = article.title.clone();
                c.chunk_index += corpus.chunks.len();
            }
            let statements = article
                .infobox
                .as_ref()
                .map(infobox_to_statements)
                .unwrap_or_default();
            let n_body = body_chunks.len();
            corpus.chunks.append(&mut body_chunks);
            if !statements.is_empty() {
                let mut info_chunks = chunk_text(&statements.join(" "), chunk_size);
                for c in &mut info_chunks {
                    c.source_title = format!("{} (infobox)", article.title);
                    c.chunk_index += corpus.chunks.len();
                }
                corpus.chunks.append(&mut info_chunks);
            }
            corpus.manifest.push(ManifestEntry {
                entity: entity.clone(),
                title: article.title.clone(),
                has_infobox: article.infobox.is_some(),
                body_chunks: n_body,
                infobox_statements: statements.len(),
            });
        }
    }
    Ok(corpus)
}

/// Fetches articles for each entity, up to `jobs` entities in flight at a
/// time. Results keep entity order regardless of completion order.
fn fetch_entity_articles(
    mentions: &[EntityMention],
    wiki: &WikiClient,
    titles_per_entity: usize,
    jobs: usize,
) -> Vec<(String, Vec<Article>)> {
    let jobs = jobs.max(1);
    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..mentions.len()).collect());
    let results: Mutex<Vec<Option<Vec<Article>>>> = Mutex::new(vec![None; mentions.len()]);

    std::thread::scope(|scope| {
        for _ in 0..jobs.min(mentions.len().max(1)) {
            scope.spawn(|| loop {
                let index = match queue.lock().expect("queue lock").pop_front() {
                    Some(i) => i,
                    None => return,
                };
                let articles = fetch_one_entity(&mentions[index], wiki, titles_per_entity);
                results.lock().expect("results lock")[index] = Some(articles);
            });
        }
    });

    let collected = results.into_inner().expect("results lock");
    mentions
        .iter()
        .zip(collected)
        .map(|(m, articles)| (m.name.clone(), articles.unwrap_or_default()))
        .collect()
}

fn fetch_one_entity(
    mention: &EntityMention,
    wiki: &WikiClient,
    titles_per_entity: usize,
) -> Vec<Article> {
    let titles = match wiki.search(&mention.name, titles_per_entity) {
        Ok(titles) => titles,
        Err(WikiError::EmptyResult(term)) => {
            log::warn!("no wiki coverage for entity `{term}`");
            return Vec::new();
        }
        Err(e) => {
            log::warn!("wiki search failed for `{}`: {e}", mention.name);
            return Vec::new();
        }
    };
    let mut articles = Vec::new();
    for title in titles.iter().take(titles_per_entity) {
        match wiki.fetch_article(title) {
            Ok(article) => articles.push(article),
            Err(e) => log::warn!("fetching `{title}` failed: {e}"),
        }
    }
    articles
}

/// Ranking phase over a prepared pool: evidence lists per sentence.
///
/// Document level embeds the whole passage once and hands every sentence the
/// same top-k list; sentence level ranks per sentence. An empty pool yields
/// empty evidence lists (downstream routes those sentences to the
/// unverifiable branch).
pub fn build_evidence(
    sentences: &[String],
    pool: &[EvidenceChunk],
    ranker: &Ranker,
    level: LevelKind,
    method: &RankMethod,
    k: usize,
) -> Result<Vec<Vec<EvidenceChunk>>, RetrievalError> {
    if pool.is_empty() {
        return Ok(vec![Vec::new(); sentences.len()]);
    }
    match level {
        LevelKind::Document => {
            let query = sentences.join(" ");
            let ranked = match ranker.rank_evidence(&query, pool, method, k) {
                Ok(ranked) => ranked,
                Err(RankError::EmptyPool) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            Ok(vec![ranked; sentences.len()])
        }
        LevelKind::Sentence => {
            let mut lists = Vec::with_capacity(sentences.len());
            for sentence in sentences {
                let ranked = match ranker.rank_evidence(sentence, pool, method, k) {
                    Ok(ranked) => ranked,
                    Err(RankError::EmptyPool) => Vec::new(),
                    Err(e) => return Err(e.into()),
                };
                lists.push(ranked);
            }
            Ok(lists)
        }
    }
}
