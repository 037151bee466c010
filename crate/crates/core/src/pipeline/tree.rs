//! The staged decision tree: verifiability, whole-vs-part, span-edit
//! proposal, and unverifiable-subtype classification. Each step issues one
//! constrained prompt, retries once on unparseable output, and falls back
//! to a conservative default.

use serde::Deserialize;

use super::prompts;
use super::{StepName, TraceStep};
use crate::annotation::{HallucType, SpanEdit};
use crate::backends::{BackendError, ChatBackend, ChatRequest};
use crate::retrieval::EvidenceChunk;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verifiability {
    Supported,
    Contradicted,
    Unverifiable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WholeVsPart {
    Whole,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnverifiableSubtype {
    Subjective,
    Invented,
    Unverifiable,
}

/// Finds the earliest whole-word occurrence of any keyword
/// (case-insensitive); ties at the same position prefer the longer keyword.
fn first_keyword<'a>(response: &str, keywords: &[&'a str]) -> Option<&'a str> {
    let upper = response.to_uppercase();
    let bytes = upper.as_bytes();
    let mut best: Option<(usize, &str)> = None;
    for &kw in keywords {
        let mut from = 0usize;
        while let Some(pos) = upper[from..].find(kw) {
            let at = from + pos;
            let before_ok = at == 0 || !bytes[at - 1].is_ascii_alphabetic();
            let after = at + kw.len();
            let after_ok = after >= bytes.len() || !bytes[after].is_ascii_alphabetic();
            if before_ok && after_ok {
                match best {
                    Some((b, bk)) if b < at || (b == at && bk.len() >= kw.len()) => {}
                    _ => best = Some((at, kw)),
                }
                break;
            }
            from = at + 1;
        }
    }
    best.map(|(_, kw)| kw)
}

pub(super) struct DecisionEngine<'a> {
    pub chat: &'a dyn ChatBackend,
    pub evidence_token_budget: usize,
    pub max_output_tokens: u32,
}

impl<'a> DecisionEngine<'a> {
    fn ask(
        &self,
        step: StepName,
        prompt: String,
        steps: &mut Vec<TraceStep>,
    ) -> Result<String, BackendError> {
        let request =
            ChatRequest::new(prompts::SYSTEM, prompt.clone()).with_max_tokens(self.max_output_tokens);
        match self.chat.chat_complete(&request) {
            Ok(response) => Ok(response),
            Err(e) => {
                steps.push(TraceStep {
                    step_name: step,
                    prompt,
                    raw_response: format!("<backend error: {e}>"),
                    parsed: "ERROR".to_string(),
                });
                Err(e)
            }
        }
    }

    /// One classify call with a single retry on unparseable output.
    /// Returns the parsed keyword, or `default` after both attempts fail.
    fn classify(
        &self,
        step: StepName,
        prompt: String,
        keywords: &[&'static str],
        default: &'static str,
        steps: &mut Vec<TraceStep>,
    ) -> Result<&'static str, BackendError> {
        for attempt in 0..2 {
            let response = self.ask(step, prompt.clone(), steps)?;
            let parsed = first_keyword(&response, keywords);
            steps.push(TraceStep {
                step_name: step,
                prompt: prompt.clone(),
                raw_response: response,
                parsed: parsed.unwrap_or("UNPARSEABLE").to_string(),
            });
            if let Some(kw) = parsed {
                return Ok(keywords.iter().find(|k| **k == kw).copied().unwrap());
            }
            if attempt == 0 {
                log::warn!("unparseable {step:?} response; retrying once");
            }
        }
        if let Some(last) = steps.last_mut() {
            last.parsed = format!("UNPARSEABLE->default {default}");
        }
        Ok(default)
    }

    /// Verifiability of a sentence against its evidence. With no evidence
    /// the call is skipped entirely: the outcome is UNVERIFIABLE by
    /// definition, recorded as a synthetic first step.
    pub fn verifiability(
        &self,
        sentence: &str,
        evidence: &[EvidenceChunk],
        context: &str,
        steps: &mut Vec<TraceStep>,
    ) -> Result<Verifiability, BackendError> {
        if evidence.is_empty() {
            steps.push(TraceStep {
                step_name: StepName::Verifiability,
                prompt: String::new(),
                raw_response: "<skipped: no evidence retrieved>".to_string(),
                parsed: "UNVERIFIABLE".to_string(),
            });
            return Ok(Verifiability::Unverifiable);
        }
        let rendered = prompts::render_evidence(evidence, self.evidence_token_budget);
        let prompt = prompts::fill(prompts::VERIFIABILITY, sentence, &rendered, context);
        let parsed = self.classify(
            StepName::Verifiability,
            prompt,
            &["SUPPORTED", "CONTRADICTED", "UNVERIFIABLE"],
            "UNVERIFIABLE",
            steps,
        )?;
        Ok(match parsed {
            "SUPPORTED" => Verifiability::Supported,
            "CONTRADICTED" => Verifiability::Contradicted,
            _ => Verifiability::Unverifiable,
        })
    }

    /// Whether the whole sentence conflicts with the evidence or only parts
    /// of it. Defaults to WHOLE: deleting is safer than applying a
    /// half-parsed edit.
    pub fn whole_vs_part(
        &self,
        sentence: &str,
        evidence: &[EvidenceChunk],
        context: &str,
        steps: &mut Vec<TraceStep>,
    ) -> Result<WholeVsPart, BackendError> {
        let rendered = prompts::render_evidence(evidence, self.evidence_token_budget);
        let prompt = prompts::fill(prompts::WHOLE_VS_PART, sentence, &rendered, context);
        let parsed = self.classify(
            StepName::WholeVsPart,
            prompt,
            &["WHOLE", "PARTIAL"],
            "WHOLE",
            steps,
        )?;
        Ok(match parsed {
            "PARTIAL" => WholeVsPart::Partial,
            _ => WholeVsPart::Whole,
        })
    }

    /// Subtype of an unverifiable sentence. Defaults to Unverifiable, the
    /// least destructive outcome.
    pub fn unverifiable_subtype(
        &self,
        sentence: &str,
        context: &str,
        steps: &mut Vec<TraceStep>,
    ) -> Result<UnverifiableSubtype, BackendError> {
        let prompt = prompts::fill(prompts::UNVERIFIABLE_SUBTYPE, sentence, "", context);
        let parsed = self.classify(
            StepName::UnverifiableSubtype,
            prompt,
            &["SUBJECTIVE", "INVENTED", "UNVERIFIABLE"],
            "UNVERIFIABLE",
            steps,
        )?;
        Ok(match parsed {
            "SUBJECTIVE" => UnverifiableSubtype::Subjective,
            "INVENTED" => UnverifiableSubtype::Invented,
            _ => UnverifiableSubtype::Unverifiable,
        })
    }

    /// Proposes typed span edits for a partially wrong sentence. Spans are
    /// located by exact substring match; overlapping proposals are dropped
    /// (first kept). `Ok(None)` after the retry means no usable edit: the
    /// caller demotes the sentence to Contradictory.
    pub fn propose_span_edits(
        &self,
        sentence: &str,
        evidence: &[EvidenceChunk],
        context: &str,
        steps: &mut Vec<TraceStep>,
    ) -> Result<Option<Vec<SpanEdit>>, BackendError> {
        let rendered = prompts::render_evidence(evidence, self.evidence_token_budget);
        let prompt = prompts::fill(prompts::SPAN_EDIT, sentence, &rendered, context);
        for _ in 0..2 {
            let response = self.ask(StepName::SpanEdit, prompt.clone(), steps)?;
            let edits = parse_span_response(&response, sentence);
            let parsed = match &edits {
                Some(edits) => format!("{} edit(s)", edits.len()),
                None => "UNPARSEABLE".to_string(),
            };
            steps.push(TraceStep {
                step_name: StepName::SpanEdit,
                prompt: prompt.clone(),
                raw_response: response,
                parsed,
            });
            if edits.is_some() {
                return Ok(edits);
            }
        }
        Ok(None)
    }
}

#[derive(Deserialize)]
struct SpanRepr {
    original: String,
    #[serde(default)]
    replacement: String,
    #[serde(default, rename = "type")]
    kind: String,
}

/// Parses the model's span-edit JSON and anchors each edit in the sentence.
/// Returns `None` when nothing usable was produced.
fn parse_span_response(response: &str, sentence: &str) -> Option<Vec<SpanEdit>> {
    let start = response.find('[')?;
    let end = response.rfind(']')?;
    if end <= start {
        return None;
    }
    let reprs: Vec<SpanRepr> = match serde_json::from_str(&response[start..=end]) {
        Ok(reprs) => reprs,
        Err(_) => {
            let values: Vec<serde_json::Value> =
                serde_json::from_str(&response[start..=end]).ok()?;
            values
                .into_iter()
                .filter_map(|v| serde_json::from_value(v).ok())
                .collect()
        }
    };

    let sentence_chars: Vec<char> = sentence.chars().collect();
    let mut edits: Vec<SpanEdit> = Vec::new();
    for repr in reprs {
        if repr.original.is_empty() {
            continue;
        }
        let halluc_type = match repr.kind.to_lowercase().as_str() {
            "entity" => HallucType::Entity,
            "relation" => HallucType::Relation,
            _ => continue,
        };
        let Some(byte_pos) = sentence.find(&repr.original) else {
            log::warn!("span `{}` not found in sentence; dropped", repr.original);
            continue;
        };
        let start = sentence[..byte_pos].chars().count();
        let end = start + repr.original.chars().count();
        debug_assert_eq!(
            sentence_chars[start..end].iter().collect::<String>(),
            repr.original
        );
        if edits.iter().any(|e| e.start < end && start < e.end) {
            log::warn!("overlapping span `{}` dropped", repr.original);
            continue;
        }
        edits.push(SpanEdit {
            halluc_type,
            start,
            end,
            original: repr.original,
            replacement: repr.replacement,
        });
    }
    if edits.is_empty() {
        None
    } else {
        edits.sort_by_key(|e| e.start);
        Some(edits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MockChatBackend, MockScript};

    fn engine(chat: &MockChatBackend) -> DecisionEngine<'_> {
        DecisionEngine {
            chat,
            evidence_token_budget: 1000,
            max_output_tokens: 256,
        }
    }

    fn one_chunk() -> Vec<EvidenceChunk> {
        vec![EvidenceChunk {
            text: "Calvino was an Italian novelist.".to_string(),
            source_title: "Italo Calvino".to_string(),
            chunk_index: 0,
            token_count: 5,
            score: 0.9,
            oversized: false,
        }]
    }

    #[test]
    fn keyword_parsing_prefers_earliest() {
        assert_eq!(
            first_keyword("it is CONTRADICTED", &["SUPPORTED", "CONTRADICTED"]),
            Some("CONTRADICTED")
        );
        // UNVERIFIABLE must not match inside VERIFIABLE-like words.
        assert_eq!(
            first_keyword("that is verifiable", &["UNVERIFIABLE"]),
            None
        );
        assert_eq!(
            first_keyword("answer: unverifiable.", &["UNVERIFIABLE"]),
            Some("UNVERIFIABLE")
        );
        assert_eq!(first_keyword("nothing here", &["WHOLE", "PARTIAL"]), None);
    }

    #[test]
    fn scripted_contradicted() {
        let chat =
            MockChatBackend::new(MockScript::new().rule("CLASSIFY_VERIFIABILITY", "CONTRADICTED"));
        let mut steps = Vec::new();
        let v = engine(&chat)
            .verifiability("S.", &one_chunk(), "", &mut steps)
            .unwrap();
        assert_eq!(v, Verifiability::Contradicted);
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].parsed, "CONTRADICTED");
    }

    #[test]
    fn empty_evidence_skips_backend() {
        let chat = MockChatBackend::new(MockScript::new());
        let mut steps = Vec::new();
        let v = engine(&chat).verifiability("S.", &[], "", &mut steps).unwrap();
        assert_eq!(v, Verifiability::Unverifiable);
        assert_eq!(chat.call_count(), 0);
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].step_name, StepName::Verifiability);
    }

    #[test]
    fn garbage_then_supported_on_retry() {
        let chat = MockChatBackend::new(
            MockScript::new()
                .rule_once("CLASSIFY_VERIFIABILITY", "mumble mumble")
                .rule("CLASSIFY_VERIFIABILITY", "SUPPORTED"),
        );
        let mut steps = Vec::new();
        let v = engine(&chat)
            .verifiability("S.", &one_chunk(), "", &mut steps)
            .unwrap();
        assert_eq!(v, Verifiability::Supported);
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].parsed, "UNPARSEABLE");
    }

    #[test]
    fn persistent_garbage_defaults_whole() {
        let chat = MockChatBackend::new(MockScript::new().with_default("???"));
        let mut steps = Vec::new();
        let w = engine(&chat)
            .whole_vs_part("S.", &one_chunk(), "", &mut steps)
            .unwrap();
        assert_eq!(w, WholeVsPart::Whole);
        assert_eq!(steps.len(), 2);
        assert!(steps[1].parsed.contains("default WHOLE"));
    }

    #[test]
    fn subtype_three_labels() {
        for (resp, expected) in [
            ("SUBJECTIVE", UnverifiableSubtype::Subjective),
            ("INVENTED", UnverifiableSubtype::Invented),
            ("UNVERIFIABLE", UnverifiableSubtype::Unverifiable),
        ] {
            let chat = MockChatBackend::new(
                MockScript::new().rule("CLASSIFY_UNVERIFIABLE_SUBTYPE", resp),
            );
            let mut steps = Vec::new();
            let got = engine(&chat)
                .unverifiable_subtype("S.", "", &mut steps)
                .unwrap();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn span_edit_located_by_substring() {
        let chat = MockChatBackend::new(MockScript::new().rule(
            "PROPOSE_SPAN_EDITS",
            r#"[{"original":"football player","replacement":"novelist","type":"entity"}]"#,
        ));
        let mut steps = Vec::new();
        let edits = engine(&chat)
            .propose_span_edits(
                "Italo Calvino was a football player.",
                &one_chunk(),
                "",
                &mut steps,
            )
            .unwrap()
            .unwrap();
        assert_eq!(edits.len(), 1);
        assert_eq!(edits[0].halluc_type, HallucType::Entity);
        assert_eq!((edits[0].start, edits[0].end), (20, 35));
    }

    #[test]
    fn relation_edit_type() {
        let chat = MockChatBackend::new(MockScript::new().rule(
            "PROPOSE_SPAN_EDITS",
            r#"[{"original":"barking","replacement":"meowing","type":"relation"}]"#,
        ));
        let mut steps = Vec::new();
        let edits = engine(&chat)
            .propose_span_edits("The cat was barking loudly.", &one_chunk(), "", &mut steps)
            .unwrap()
            .unwrap();
        assert_eq!(edits[0].halluc_type, HallucType::Relation);
    }

    #[test]
    fn overlapping_second_edit_dropped() {
        let chat = MockChatBackend::new(MockScript::new().rule(
            "PROPOSE_SPAN_EDITS",
            r#"[{"original":"football player","replacement":"novelist","type":"entity"},
               {"original":"player","replacement":"writer","type":"entity"}]"#,
        ));
        let mut steps = Vec::new();
        let edits = engine(&chat)
            .propose_span_edits(
                "Italo Calvino was a football player.",
                &one_chunk(),
                "",
                &mut steps,
            )
            .unwrap()
            .unwrap();
        assert_eq!(edits.len(), 1);
        assert_eq!(edits[0].original, "football player");
    }

    #[test]
    fn unlocatable_spans_exhaust_to_none() {
        let chat = MockChatBackend::new(MockScript::new().rule(
            "PROPOSE_SPAN_EDITS",
            r#"[{"original":"not in the sentence","replacement":"x","type":"entity"}]"#,
        ));
        let mut steps = Vec::new();
        let edits = engine(&chat)
            .propose_span_edits("Short sentence.", &one_chunk(), "", &mut steps)
            .unwrap();
        assert!(edits.is_none());
        assert_eq!(steps.len(), 2, "one step per attempt");
    }
}
