//! Passage segmentation: rule-based splitting or a model-based variant that
//! validates coverage and falls back to the rules on failure.

use serde::{Deserialize, Serialize};

use super::prompts;
use crate::backends::{ChatBackend, ChatRequest};
use crate::text::{split_sentences, SentenceSplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitterKind {
    Rule,
    Model,
}

impl SplitterKind {
    pub fn name(&self) -> &'static str {
        match self {
            SplitterKind::Rule => "rule",
            SplitterKind::Model => "model",
        }
    }
}

/// Splits `passage` into sentences. Model-based splitting asks the chat
/// backend for a JSON list and accepts it only if the sentences cover the
/// passage in order; otherwise the rule-based result is returned along with
/// a warning describing why.
pub fn split_passage(
    passage: &str,
    kind: SplitterKind,
    chat: Option<&dyn ChatBackend>,
) -> (SentenceSplit, Option<String>) {
    match kind {
        SplitterKind::Rule => (split_sentences(passage), None),
        SplitterKind::Model => {
            let Some(chat) = chat else {
                return (
                    split_sentences(passage),
                    Some("model splitter requested without a chat backend".to_string()),
                );
            };
            match model_split(passage, chat) {
                Ok(split) => (split, None),
                Err(reason) => (
                    split_sentences(passage),
                    Some(format!("model splitter fell back to rules: {reason}")),
                ),
            }
        }
    }
}

fn model_split(passage: &str, chat: &dyn ChatBackend) -> Result<SentenceSplit, String> {
    if passage.trim().is_empty() {
        return Ok(split_sentences(passage));
    }
    let prompt = prompts::SPLIT.replace("{passage}", passage);
    let request = ChatRequest::new(prompts::SYSTEM, prompt).with_max_tokens(2048);
    let response = chat.chat_complete(&request).map_err(|e| e.to_string())?;
    let sentences = parse_sentence_list(&response).ok_or("no JSON array in response")?;
    align_to_passage(passage, &sentences).ok_or_else(|| "sentences do not cover passage".to_string())
}

fn parse_sentence_list(response: &str) -> Option<Vec<String>> {
    let start = response.find('[')?;
    let end = response.rfind(']')?;
    if end <= start {
        return None;
    }
    serde_json::from_str::<Vec<String>>(&response[start..=end]).ok()
}

/// Locates each model sentence in the passage, in order, and derives the
/// separators. Fails when a sentence is missing, out of order, or when
/// non-whitespace text is left uncovered.
fn align_to_passage(passage: &str, sentences: &[String]) -> Option<SentenceSplit> {
    let mut separators = Vec::with_capacity(sentences.len() + 1);
    let mut cleaned = Vec::with_capacity(sentences.len());
    let mut cursor = 0usize;
    for sentence in sentences {
        let needle = sentence.trim();
        if needle.is_empty() {
            continue;
        }
        let found = passage[cursor..].find(needle)?;
        let gap = &passage[cursor..cursor + found];
        if !gap.chars().all(char::is_whitespace) {
            return None;
        }
        separators.push(gap.to_string());
        cleaned.push(needle.to_string());
        cursor += found + needle.len();
    }
    let tail = &passage[cursor..];
    if !tail.chars().all(char::is_whitespace) {
        return None;
    }
    if cleaned.is_empty() && !passage.trim().is_empty() {
        return None;
    }
    separators.push(tail.to_string());
    Some(SentenceSplit {
        sentences: cleaned,
        separators,
    })
}
