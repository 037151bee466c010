//! The detection-and-editing engine: split the passage into sentences, run
//! each through the staged decision tree with its evidence and the
//! previously edited context, and apply type-specific edits progressively.
//!
//! Sentences are processed strictly in order. The repository of edited
//! sentences supplies trusted context for later sentences, which is what
//! makes the editing progressive.

mod prompts;
mod split;
mod tree;

pub use prompts::render_evidence;
pub use split::{split_passage, SplitterKind};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{
    apply_span_edits, AnnotatedDocument, AnnotatedSentence, HallucType, SentenceLabel, SpanEdit,
};
use crate::backends::{BackendError, ChatBackend};
use crate::retrieval::{EvidenceChunk, RetrievalError};
use crate::text::truncate_to_last_tokens;
use tree::{DecisionEngine, UnverifiableSubtype, Verifiability, WholeVsPart};

/// Steps of the decision tree, in their legal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepName {
    Verifiability,
    WholeVsPart,
    SpanEdit,
    UnverifiableSubtype,
}

/// One prompt/response exchange inside a decision trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_name: StepName,
    pub prompt: String,
    pub raw_response: String,
    pub parsed: String,
}

/// The full path one sentence took through the tree, for auditability.
#[derive(Debug, Clone)]
pub struct DecisionTrace {
    pub sentence_index: usize,
    pub steps: Vec<TraceStep>,
    pub final_label: SentenceLabel,
}

/// Checks the step-order invariants: verifiability always first,
/// whole-vs-part only after CONTRADICTED, span edits only after PARTIAL,
/// subtype only after UNVERIFIABLE. Retries (repeated step names) are legal.
pub fn validate_trace(trace: &DecisionTrace) -> Result<(), String> {
    let steps = &trace.steps;
    if steps.is_empty() {
        return Err("trace has no steps".to_string());
    }
    if steps[0].step_name != StepName::Verifiability {
        return Err(format!(
            "first step must be verifiability, found {:?}",
            steps[0].step_name
        ));
    }
    for pair in steps.windows(2) {
        let ok = matches!(
            (pair[0].step_name, pair[1].step_name),
            (StepName::Verifiability, StepName::Verifiability)
                | (StepName::Verifiability, StepName::WholeVsPart)
                | (StepName::Verifiability, StepName::UnverifiableSubtype)
                | (StepName::WholeVsPart, StepName::WholeVsPart)
                | (StepName::WholeVsPart, StepName::SpanEdit)
                | (StepName::SpanEdit, StepName::SpanEdit)
                | (StepName::UnverifiableSubtype, StepName::UnverifiableSubtype)
        );
        if !ok {
            return Err(format!(
                "illegal step transition {:?} -> {:?}",
                pair[0].step_name, pair[1].step_name
            ));
        }
    }
    let last_verifiability = steps
        .iter().rfind(|s| s.step_name == StepName::Verifiability);
    let has = |name: StepName| steps.iter().any(|s| s.step_name == name);
    if has(StepName::UnverifiableSubtype) {
        let v = last_verifiability.map(|s| s.parsed.as_str()).unwrap_or("");
        if !v.contains("UNVERIFIABLE") {
            return Err("unverifiable_subtype without UNVERIFIABLE verdict".to_string());
        }
    }
    if has(StepName::WholeVsPart) {
        let v = last_verifiability.map(|s| s.parsed.as_str()).unwrap_or("");
        if !v.contains("CONTRADICTED") {
            return Err("whole_vs_part without CONTRADICTED verdict".to_string());
        }
    }
    if has(StepName::SpanEdit) {
        let w = steps
            .iter().rfind(|s| s.step_name == StepName::WholeVsPart)
            .map(|s| s.parsed.as_str())
            .unwrap_or("");
        if !w.contains("PARTIAL") {
            return Err("span_edit without PARTIAL verdict".to_string());
        }
    }
    Ok(())
}

/// How non-modifiable warnings are handled when producing edited text.
/// `Factscore` additionally deletes Subjective and Unverifiable sentences,
/// because that scorer treats both as non-factual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    Standard,
    Factscore,
}

impl EditMode {
    pub fn name(&self) -> &'static str {
        match self {
            EditMode::Standard => "standard",
            EditMode::Factscore => "factscore",
        }
    }
}

/// The concrete transformation applied to one sentence.
#[derive(Debug, Clone, PartialEq)]
pub enum EditAction {
    Keep,
    ReplaceSpans(Vec<SpanEdit>),
    DeleteSentence,
    Warn(HallucType),
}

/// Applies the edit strategy for a finalized label: keep factual sentences
/// unchanged, apply span replacements right-to-left, delete contradictory
/// and invented sentences, and warn-wrap (or delete, in factscore mode)
/// subjective and unverifiable ones. Returns the post-edit form (`None`
/// when deleted) and the action taken.
pub fn apply_edit(
    sentence: &str,
    label: &SentenceLabel,
    mode: EditMode,
) -> (Option<String>, EditAction) {
    match label {
        SentenceLabel::Factual => (Some(sentence.to_string()), EditAction::Keep),
        SentenceLabel::Edited(edits) => (
            Some(apply_span_edits(sentence, edits)),
            EditAction::ReplaceSpans(edits.clone()),
        ),
        SentenceLabel::Contradictory | SentenceLabel::Invented => {
            (None, EditAction::DeleteSentence)
        }
        SentenceLabel::Subjective | SentenceLabel::Unverifiable => {
            let t = label.sentence_level_type().expect("sentence-level");
            match mode {
                EditMode::Standard => {
                    let tag = t.tag_name();
                    (
                        Some(format!("<{tag}>{sentence}</{tag}>")),
                        EditAction::Warn(t),
                    )
                }
                EditMode::Factscore => (None, EditAction::DeleteSentence),
            }
        }
    }
}

/// Post-edit sentence forms in processing order. Deleted sentences are
/// stored as empty markers so entry `i` always corresponds to sentence `i`.
#[derive(Debug, Default, Clone)]
pub struct TextRepository {
    entries: Vec<String>,
}

impl TextRepository {
    pub fn push(&mut self, edited: Option<String>) {
        self.entries.push(edited.unwrap_or_default());
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The trusted context so far: non-deleted entries joined with spaces.
    pub fn context_text(&self) -> String {
        self.entries
            .iter()
            .filter(|e| !e.is_empty())
            .cloned()
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Supplies the per-sentence evidence lists for a split passage.
pub trait EvidenceSource {
    fn evidence_for(
        &self,
        sentences: &[String],
    ) -> Result<Vec<Vec<EvidenceChunk>>, RetrievalError>;
}

/// The same evidence for every sentence. Useful for tests and for prebuilt
/// document-level rankings.
pub struct FixedEvidence(pub Vec<EvidenceChunk>);

impl EvidenceSource for FixedEvidence {
    fn evidence_for(
        &self,
        sentences: &[String],
    ) -> Result<Vec<Vec<EvidenceChunk>>, RetrievalError> {
        Ok(vec![self.0.clone(); sentences.len()])
    }
}

/// No evidence at all: every sentence takes the unverifiable branch.
pub struct NoEvidence;

impl EvidenceSource for NoEvidence {
    fn evidence_for(
        &self,
        sentences: &[String],
    ) -> Result<Vec<Vec<EvidenceChunk>>, RetrievalError> {
        Ok(vec![Vec::new(); sentences.len()])
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("annotated output failed validation: {0}")]
    Document(String),
}

/// Everything produced for one passage: the annotated document, the edited
/// plain text, and one decision trace per sentence.
#[derive(Debug, Clone)]
pub struct DocumentRun {
    pub annotated: AnnotatedDocument,
    pub edited: String,
    pub traces: Vec<DecisionTrace>,
    /// Non-fatal degradations encountered (splitter fallback, per-sentence
    /// backend failures).
    pub warnings: Vec<String>,
}

pub struct Pipeline {
    chat: Arc<dyn ChatBackend>,
    splitter: SplitterKind,
    edit_mode: EditMode,
    /// Whitespace tokens of edited context supplied to prompts (most recent
    /// kept).
    context_token_budget: usize,
    /// Whitespace tokens of rendered evidence per prompt (lowest score
    /// dropped first).
    evidence_token_budget: usize,
    max_output_tokens: u32,
}

impl Pipeline {
    pub fn new(chat: Arc<dyn ChatBackend>) -> Self {
        Self {
            chat,
            splitter: SplitterKind::Rule,
            edit_mode: EditMode::Standard,
            context_token_budget: 1024,
            evidence_token_budget: 3000,
            max_output_tokens: 512,
        }
    }

    pub fn with_splitter(mut self, splitter: SplitterKind) -> Self {
        self.splitter = splitter;
        self
    }

    pub fn with_edit_mode(mut self, mode: EditMode) -> Self {
        self.edit_mode = mode;
        self
    }

    pub fn with_context_budget(mut self, tokens: usize) -> Self {
        self.context_token_budget = tokens;
        self
    }

    pub fn with_evidence_budget(mut self, tokens: usize) -> Self {
        self.evidence_token_budget = tokens;
        self
    }

    pub fn edit_mode(&self) -> EditMode {
        self.edit_mode
    }

    /// Runs the full tree for one sentence. Backend failures degrade the
    /// sentence to Unverifiable (warn) rather than aborting the document.
    fn label_sentence(
        &self,
        engine: &DecisionEngine<'_>,
        sentence: &str,
        evidence: &[EvidenceChunk],
        context: &str,
        steps: &mut Vec<TraceStep>,
        warnings: &mut Vec<String>,
    ) -> SentenceLabel {
        let mut run = || -> Result<SentenceLabel, BackendError> {
            match engine.verifiability(sentence, evidence, context, steps)? {
                Verifiability::Supported => Ok(SentenceLabel::Factual),
                Verifiability::Contradicted => {
                    match engine.whole_vs_part(sentence, evidence, context, steps)? {
                        WholeVsPart::Whole => Ok(SentenceLabel::Contradictory),
                        WholeVsPart::Partial => {
                            match engine.propose_span_edits(sentence, evidence, context, steps)? {
                                Some(edits) => Ok(SentenceLabel::Edited(edits)),
                                // No locatable edit: removing is safer than
                                // leaving a known-contradicted sentence.
                                None => Ok(SentenceLabel::Contradictory),
                            }
                        }
                    }
                }
                Verifiability::Unverifiable => {
                    Ok(match engine.unverifiable_subtype(sentence, context, steps)? {
                        UnverifiableSubtype::Subjective => SentenceLabel::Subjective,
                        UnverifiableSubtype::Invented => SentenceLabel::Invented,
                        UnverifiableSubtype::Unverifiable => SentenceLabel::Unverifiable,
                    })
                }
            }
        };
        match run() {
            Ok(label) => label,
            Err(e) => {
                warnings.push(format!("sentence degraded to unverifiable: {e}"));
                SentenceLabel::Unverifiable
            }
        }
    }

    /// Processes a passage end to end. Sentences are handled strictly in
    /// order; the context for sentence `i` is the repository of edited
    /// sentences `0..i`, truncated to the most recent tokens.
    pub fn process_document(
        &self,
        passage: &str,
        evidence: &dyn EvidenceSource,
    ) -> Result<DocumentRun, PipelineError> {
        let mut warnings = Vec::new();
        let (split, split_warning) =
            split_passage(passage, self.splitter, Some(self.chat.as_ref()));
        if let Some(w) = split_warning {
            warnings.push(w);
        }

        let sentences = split.sentences;
        let separators = split.separators;
        if sentences.is_empty() {
            return Ok(DocumentRun {
                annotated: AnnotatedDocument::from_parts(Vec::new(), vec![String::new()])
                    .expect("empty document"),
                edited: String::new(),
                traces: Vec::new(),
                warnings,
            });
        }

        let evidence_lists = evidence.evidence_for(&sentences)?;
        debug_assert_eq!(evidence_lists.len(), sentences.len());

        let engine = DecisionEngine {
            chat: self.chat.as_ref(),
            evidence_token_budget: self.evidence_token_budget,
            max_output_tokens: self.max_output_tokens,
        };

        let mut repository = TextRepository::default();
        let mut traces = Vec::with_capacity(sentences.len());
        let mut labeled = Vec::with_capacity(sentences.len());
        let mut edited_forms: Vec<Option<String>> = Vec::with_capacity(sentences.len());

        for (i, sentence) in sentences.iter().enumerate() {
            let context =
                truncate_to_last_tokens(&repository.context_text(), self.context_token_budget);
            let empty = Vec::new();
            let sentence_evidence = evidence_lists.get(i).unwrap_or(&empty);
            let mut steps = Vec::new();
            let label = self.label_sentence(
                &engine,
                sentence,
                sentence_evidence,
                &context,
                &mut steps,
                &mut warnings,
            );
            let (edited, _action) = apply_edit(sentence, &label, self.edit_mode);
            repository.push(edited.clone());
            edited_forms.push(edited);
            traces.push(DecisionTrace {
                sentence_index: i,
                steps,
                final_label: label.clone(),
            });
            labeled.push(AnnotatedSentence {
                text: sentence.clone(),
                label,
            });
        }

        let annotated = AnnotatedDocument::from_parts(labeled, separators.clone())
            .map_err(|e| PipelineError::Document(e.to_string()))?;
        let edited = assemble_edited(&edited_forms, &separators);

        Ok(DocumentRun {
            annotated,
            edited,
            traces,
            warnings,
        })
    }
}

/// Joins the surviving edited sentences back into a document. Adjacent
/// survivors keep their original separator; when sentences were deleted in
/// between, the separator immediately following the last survivor is used.
/// A document with no survivors is empty.
fn assemble_edited(edited: &[Option<String>], separators: &[String]) -> String {
    let mut out = String::new();
    let mut last_kept: Option<usize> = None;
    for (i, form) in edited.iter().enumerate() {
        let Some(text) = form else { continue };
        match last_kept {
            None => out.push_str(&separators[0]),
            Some(prev) => out.push_str(&separators[prev + 1]),
        }
        out.push_str(text);
        last_kept = Some(i);
    }
    if last_kept.is_some() {
        out.push_str(separators.last().map(String::as_str).unwrap_or(""));
    }
    out
}
