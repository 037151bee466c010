//! Prompt templates for each decision-tree step, stored as versioned text
//! assets with `{sentence}`, `{evidence}`, and `{context}` slots. Each
//! template opens with a stable `TASK:` marker so mock scripts can key on
//! the step.

use crate::retrieval::EvidenceChunk;
use crate::text::token_count;

pub const SYSTEM: &str = include_str!("../../prompts/system.txt");
pub const SPLIT: &str = include_str!("../../prompts/split.txt");
pub const VERIFIABILITY: &str = include_str!("../../prompts/verifiability.txt");
pub const WHOLE_VS_PART: &str = include_str!("../../prompts/whole_vs_part.txt");
pub const SPAN_EDIT: &str = include_str!("../../prompts/span_edit.txt");
pub const UNVERIFIABLE_SUBTYPE: &str = include_str!("../../prompts/unverifiable_subtype.txt");

pub fn fill(template: &str, sentence: &str, evidence: &str, context: &str) -> String {
    template
        .replace("{sentence}", sentence)
        .replace("{evidence}", evidence)
        .replace("{context}", if context.is_empty() { "(none)" } else { context })
}

/// Renders evidence chunks as a numbered list for prompting. When the total
/// exceeds `token_budget` whitespace tokens, the lowest-scored chunks are
/// dropped first; the survivors keep their ranked order. At least one chunk
/// always survives a non-empty list.
pub fn render_evidence(chunks: &[EvidenceChunk], token_budget: usize) -> String {
    if chunks.is_empty() {
        return "(no evidence retrieved)".to_string();
    }
    let mut keep: Vec<bool> = vec![true; chunks.len()];
    let mut total: usize = chunks.iter().map(|c| token_count(&c.text)).sum();
    // Droppable candidates sorted by ascending score; keep the best chunk.
    let mut by_score: Vec<usize> = (0..chunks.len()).collect();
    by_score.sort_by(|a, b| {
        chunks[*a]
            .score
            .partial_cmp(&chunks[*b].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in &by_score {
        if total <= token_budget || keep.iter().filter(|k| **k).count() <= 1 {
            break;
        }
        keep[i] = false;
        total -= token_count(&chunks[i].text);
    }

    let mut out = String::new();
    let mut n = 1;
    for (i, chunk) in chunks.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        if chunk.source_title.is_empty() {
            out.push_str(&format!("[{n}] {}", chunk.text));
        } else {
            out.push_str(&format!("[{n}] ({}) {}", chunk.source_title, chunk.text));
        }
        n += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(text: &str, score: f64) -> EvidenceChunk {
        EvidenceChunk {
            text: text.to_string(),
            source_title: "T".to_string(),
            chunk_index: 0,
            token_count: token_count(text),
            score,
            oversized: false,
        }
    }

    #[test]
    fn fill_replaces_slots() {
        let prompt = fill(VERIFIABILITY, "S1", "E1", "C1");
        assert!(prompt.contains("Sentence: S1"));
        assert!(prompt.contains("E1"));
        assert!(prompt.contains("C1"));
        assert!(prompt.contains("CLASSIFY_VERIFIABILITY"));
    }

    #[test]
    fn empty_context_renders_placeholder() {
        let prompt = fill(VERIFIABILITY, "S", "E", "");
        assert!(prompt.contains("(none)"));
    }

    #[test]
    fn evidence_budget_drops_lowest_scores_first() {
        let chunks = vec![
            chunk("high scored chunk words here", 0.9),
            chunk("low scored chunk words here", 0.1),
            chunk("mid scored chunk words here", 0.5),
        ];
        let rendered = render_evidence(&chunks, 10);
        assert!(rendered.contains("high scored"));
        assert!(rendered.contains("mid scored"));
        assert!(!rendered.contains("low scored"));
    }

    #[test]
    fn at_least_one_chunk_survives() {
        let chunks = vec![chunk("many words exceeding any budget at all", 0.2)];
        let rendered = render_evidence(&chunks, 1);
        assert!(rendered.contains("many words"));
    }

    #[test]
    fn empty_evidence_placeholder() {
        assert_eq!(render_evidence(&[], 100), "(no evidence retrieved)");
    }
}
