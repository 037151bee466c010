//! Key-entity extraction via the chat backend.

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ChatBackend, ChatRequest};

const ENTITY_SYSTEM_PROMPT: &str =
    "You are a precise information extraction assistant. Respond only in the requested format.";

const ENTITY_PROMPT: &str = "TASK: EXTRACT_ENTITIES\n\
Identify the key named entities in the document below. For each entity give a one-phrase \
definition that disambiguates it.\n\
Respond with a JSON array only, no prose: \
[{\"name\": \"<entity name>\", \"def\": \"<brief definition>\"}]\n\
Document:\n{document}";

/// A key entity found in the document, with the brief definition appended
/// to disambiguate lookups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub name: String,
    pub brief_definition: String,
    /// Unicode-scalar offsets of the first occurrence of `name` in the
    /// source document, if present verbatim.
    pub source_span: Option<(usize, usize)>,
}

#[derive(Deserialize)]
struct EntityRepr {
    #[serde(default)]
    name: String,
    #[serde(default, alias = "definition")]
    def: String,
}

/// Locates the first case-insensitive occurrence of `name` in `document`,
/// returning char offsets.
fn locate(document: &str, name: &str) -> Option<(usize, usize)> {
    if name.is_empty() {
        return None;
    }
    let doc_lower = document.to_lowercase();
    let name_lower = name.to_lowercase();
    let byte_pos = doc_lower.find(&name_lower)?;
    let start = document
        .char_indices()
        .take_while(|(b, _)| *b < byte_pos)
        .count();
    Some((start, start + name_lower.chars().count()))
}

/// Pulls the first top-level JSON array out of `response` and parses its
/// entity objects, skipping malformed elements.
fn parse_entity_response(response: &str) -> Option<Vec<EntityRepr>> {
    let start = response.find('[')?;
    let mut depth = 0i32;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in response[start..].char_indices() {
        if in_string {
            match c {
                '\\' if !escaped => escaped = true,
                '"' if !escaped => in_string = false,
                _ => escaped = false,
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    let slice = &response[start..start + i + c.len_utf8()];
                    if let Ok(entries) = serde_json::from_str::<Vec<EntityRepr>>(slice) {
                        return Some(entries);
                    }
                    // Salvage element by element.
                    if let Ok(values) = serde_json::from_str::<Vec<serde_json::Value>>(slice) {
                        let entries: Vec<EntityRepr> = values
                            .into_iter()
                            .filter_map(|v| serde_json::from_value(v).ok())
                            .collect();
                        return Some(entries);
                    }
                    return None;
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts deduplicated key entities from `document` using the chat
/// backend. Malformed model output is retried once, then salvaged
/// best-effort; fewer entities come back, never a crash. An empty document
/// returns an empty list without a backend call.
pub fn extract_entities(
    document: &str,
    chat: &dyn ChatBackend,
) -> Result<Vec<EntityMention>, BackendError> {
    if document.trim().is_empty() {
        return Ok(Vec::new());
    }
    let prompt = ENTITY_PROMPT.replace("{document}", document);
    let request = ChatRequest::new(ENTITY_SYSTEM_PROMPT, prompt).with_max_tokens(1024);

    let mut entries = None;
    for _ in 0..2 {
        let response = chat.chat_complete(&request)?;
        entries = parse_entity_response(&response);
        if entries.is_some() {
            break;
        }
        log::warn!("entity extraction returned unparseable output; retrying once");
    }

    let mut mentions: Vec<EntityMention> = Vec::new();
    for entry in entries.unwrap_or_default() {
        let name = entry.name.trim().to_string();
        if name.is_empty() {
            continue;
        }
        if mentions
            .iter()
            .any(|m| m.name.eq_ignore_ascii_case(&name))
        {
            continue;
        }
        let brief_definition = if entry.def.trim().is_empty() {
            "(definition unavailable)".to_string()
        } else {
            entry.def.trim().to_string()
        };
        let source_span = locate(document, &name);
        mentions.push(EntityMention {
            name,
            brief_definition,
            source_span,
        });
    }
    Ok(mentions)
}
