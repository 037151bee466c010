//! Tag-annotated document grammar for the six fine-grained hallucination
//! types, with a parser, serializer, and label extraction.
//!
//! Span-level errors wrap a `<del>original</del><ins>replacement</ins>` pair:
//!
//! ```text
//! Italo Calvino was a <entity><del>football player</del><ins>novelist</ins></entity>.
//! ```
//!
//! Sentence-level errors wrap the whole sentence:
//!
//! ```text
//! <invented>Calvino wrote a novel named Iron Hammer and Water.</invented>
//! ```
//!
//! Tags are lowercase and attribute-free; `serialize(parse(s)) == s` holds
//! byte-for-byte on every well-formed input. All span offsets are
//! Unicode-scalar indices into the owning sentence, not byte offsets.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{self, split_sentences};

/// One of the six fine-grained hallucination types.
///
/// `Entity` and `Relation` are span-level (a small part of the sentence is
/// wrong and can be repaired in place); the other four are sentence-level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HallucType {
    Entity,
    Relation,
    Contradictory,
    Invented,
    Subjective,
    Unverifiable,
}

impl HallucType {
    pub const ALL: [HallucType; 6] = [
        HallucType::Entity,
        HallucType::Relation,
        HallucType::Contradictory,
        HallucType::Invented,
        HallucType::Subjective,
        HallucType::Unverifiable,
    ];

    /// Whether factual evidence can directly support or refute the statement.
    pub fn verifiable(self) -> bool {
        matches!(
            self,
            HallucType::Entity | HallucType::Relation | HallucType::Contradictory
        )
    }

    /// Whether the error is repairable by editing a small part of the
    /// sentence (phrase level) rather than removing the sentence.
    pub fn modifiable(self) -> bool {
        matches!(self, HallucType::Entity | HallucType::Relation)
    }

    /// Span-level types annotate sub-sentence ranges; the rest label whole
    /// sentences.
    pub fn span_level(self) -> bool {
        self.modifiable()
    }

    pub fn tag_name(self) -> &'static str {
        match self {
            HallucType::Entity => "entity",
            HallucType::Relation => "relation",
            HallucType::Contradictory => "contradictory",
            HallucType::Invented => "invented",
            HallucType::Subjective => "subjective",
            HallucType::Unverifiable => "unverifiable",
        }
    }

    pub fn from_tag_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.tag_name() == name)
    }

    /// Column/report heading, e.g. `Entity`.
    pub fn display_name(self) -> &'static str {
        match self {
            HallucType::Entity => "Entity",
            HallucType::Relation => "Relation",
            HallucType::Contradictory => "Contradictory",
            HallucType::Invented => "Invented",
            HallucType::Subjective => "Subjective",
            HallucType::Unverifiable => "Unverifiable",
        }
    }
}

impl fmt::Display for HallucType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// A sentence-level evaluation label: either factual or one of the six
/// hallucination types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Factual,
    Halluc(HallucType),
}

/// The set of labels carried by one sentence. A sentence with multiple span
/// edits yields the set of their types; any other sentence yields a
/// singleton.
pub type LabelSet = BTreeSet<Label>;

/// A single in-place correction: replace `original` (at `start..end`,
/// Unicode-scalar offsets into the owning sentence) with `replacement`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanEdit {
    #[serde(rename = "type")]
    pub halluc_type: HallucType,
    pub start: usize,
    pub end: usize,
    pub original: String,
    pub replacement: String,
}

/// The single label each sentence carries. `Edited` holds the sentence's
/// span edits and is the only variant allowed to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SentenceLabel {
    Factual,
    Contradictory,
    Invented,
    Subjective,
    Unverifiable,
    Edited(Vec<SpanEdit>),
}

impl SentenceLabel {
    pub fn sentence_level_type(&self) -> Option<HallucType> {
        match self {
            SentenceLabel::Contradictory => Some(HallucType::Contradictory),
            SentenceLabel::Invented => Some(HallucType::Invented),
            SentenceLabel::Subjective => Some(HallucType::Subjective),
            SentenceLabel::Unverifiable => Some(HallucType::Unverifiable),
            _ => None,
        }
    }

    pub fn span_edits(&self) -> &[SpanEdit] {
        match self {
            SentenceLabel::Edited(edits) => edits,
            _ => &[],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SentenceLabel::Factual => "factual",
            SentenceLabel::Contradictory => "contradictory",
            SentenceLabel::Invented => "invented",
            SentenceLabel::Subjective => "subjective",
            SentenceLabel::Unverifiable => "unverifiable",
            SentenceLabel::Edited(_) => "edited",
        }
    }

    /// The label set this sentence contributes to evaluation.
    pub fn label_set(&self) -> LabelSet {
        let mut set = BTreeSet::new();
        match self {
            SentenceLabel::Factual => {
                set.insert(Label::Factual);
            }
            SentenceLabel::Edited(edits) => {
                for e in edits {
                    set.insert(Label::Halluc(e.halluc_type));
                }
            }
            other => {
                set.insert(Label::Halluc(
                    other.sentence_level_type().expect("sentence-level label"),
                ));
            }
        }
        set
    }
}

/// One sentence of a document together with its label. `text` is the
/// original (pre-edit) surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub text: String,
    pub label: SentenceLabel,
}

/// Whether `strip_annotations` keeps each span's original text or applies
/// its replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripPolicy {
    KeepOriginal,
    ApplyReplacements,
}

/// A parsed annotated document: ordered sentences with labels, plus the
/// inter-sentence whitespace needed to reproduce the plain text exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    sentences: Vec<AnnotatedSentence>,
    separators: Vec<String>,
}

/// Structural violations rejected when building an [`AnnotatedDocument`].
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DocumentError {
    #[error("expected {expected} separators for {sentences} sentences, got {got}")]
    SeparatorShape {
        expected: usize,
        got: usize,
        sentences: usize,
    },
    #[error("separator {index} contains non-whitespace text")]
    NonWhitespaceSeparator { index: usize },
    #[error("sentence {sentence}: Edited label requires at least one span edit")]
    EmptyEdit { sentence: usize },
    #[error("sentence {sentence}: span {start}..{end} out of bounds (len {len})")]
    SpanOutOfBounds {
        sentence: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("sentence {sentence}: span original {start}..{end} does not match sentence text")]
    SpanTextMismatch {
        sentence: usize,
        start: usize,
        end: usize,
    },
    #[error("sentence {sentence}: overlapping span edits")]
    OverlappingSpans { sentence: usize },
    #[error("sentence {sentence}: span edit typed {got} (must be entity or relation)")]
    NonSpanType { sentence: usize, got: HallucType },
}

impl AnnotatedDocument {
    /// Builds a document from labeled sentences and separators, validating
    /// every structural invariant.
    pub fn from_parts(
        sentences: Vec<AnnotatedSentence>,
        separators: Vec<String>,
    ) -> Result<Self, DocumentError> {
        if separators.len() != sentences.len() + 1 {
            return Err(DocumentError::SeparatorShape {
                expected: sentences.len() + 1,
                got: separators.len(),
                sentences: sentences.len(),
            });
        }
        for (i, sep) in separators.iter().enumerate() {
            if !sep.chars().all(char::is_whitespace) {
                return Err(DocumentError::NonWhitespaceSeparator { index: i });
            }
        }
        for (i, sentence) in sentences.iter().enumerate() {
            if let SentenceLabel::Edited(edits) = &sentence.label {
                if edits.is_empty() {
                    return Err(DocumentError::EmptyEdit { sentence: i });
                }
                let len = sentence.text.chars().count();
                let mut ranges: Vec<(usize, usize)> = Vec::with_capacity(edits.len());
                for e in edits {
                    if !e.halluc_type.span_level() {
                        return Err(DocumentError::NonSpanType {
                            sentence: i,
                            got: e.halluc_type,
                        });
                    }
                    if e.start >= e.end || e.end > len {
                        return Err(DocumentError::SpanOutOfBounds {
                            sentence: i,
                            start: e.start,
                            end: e.end,
                            len,
                        });
                    }
                    if text::char_slice(&sentence.text, e.start, e.end) != e.original {
                        return Err(DocumentError::SpanTextMismatch {
                            sentence: i,
                            start: e.start,
                            end: e.end,
                        });
                    }
                    ranges.push((e.start, e.end));
                }
                ranges.sort_unstable();
                if ranges.windows(2).any(|w| w[0].1 > w[1].0) {
                    return Err(DocumentError::OverlappingSpans { sentence: i });
                }
            }
        }
        Ok(Self {
            sentences,
            separators,
        })
    }

    pub fn sentences(&self) -> &[AnnotatedSentence] {
        &self.sentences
    }

    pub fn separators(&self) -> &[String] {
        &self.separators
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// The plain text the annotations were layered over.
    pub fn source_plain_text(&self) -> String {
        self.strip_annotations(StripPolicy::KeepOriginal)
    }

    /// Removes all tags. `KeepOriginal` yields the source text verbatim;
    /// `ApplyReplacements` substitutes each span edit's replacement.
    pub fn strip_annotations(&self, policy: StripPolicy) -> String {
        let mut out = String::new();
        for (i, sentence) in self.sentences.iter().enumerate() {
            out.push_str(&self.separators[i]);
            match (policy, &sentence.label) {
                (StripPolicy::ApplyReplacements, SentenceLabel::Edited(edits)) => {
                    out.push_str(&apply_span_edits(&sentence.text, edits));
                }
                _ => out.push_str(&sentence.text),
            }
        }
        out.push_str(self.separators.last().map(String::as_str).unwrap_or(""));
        out
    }

    /// One label set per sentence, in order.
    pub fn sentence_label_sets(&self) -> Vec<LabelSet> {
        self.sentences.iter().map(|s| s.label.label_set()).collect()
    }

    /// Renders the document back to the annotated string form. Inverse of
    /// [`parse_annotated`] on well-formed input.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, sentence) in self.sentences.iter().enumerate() {
            out.push_str(&self.separators[i]);
            render_sentence(&mut out, sentence);
        }
        out.push_str(self.separators.last().map(String::as_str).unwrap_or(""));
        out
    }
}

/// Applies span edits to a sentence, replacing each original with its
/// replacement. Edits are applied right-to-left so earlier offsets stay
/// valid.
pub fn apply_span_edits(sentence: &str, edits: &[SpanEdit]) -> String {
    let mut sorted: Vec<&SpanEdit> = edits.iter().collect();
    sorted.sort_by_key(|e| std::cmp::Reverse(e.start));
    let mut out = sentence.to_string();
    for e in sorted {
        let b_start = text::char_to_byte(&out, e.start);
        let b_end = text::char_to_byte(&out, e.end);
        out.replace_range(b_start..b_end, &e.replacement);
    }
    out
}

fn render_sentence(out: &mut String, sentence: &AnnotatedSentence) {
    match &sentence.label {
        SentenceLabel::Factual => out.push_str(&sentence.text),
        SentenceLabel::Edited(edits) => {
            let mut sorted: Vec<&SpanEdit> = edits.iter().collect();
            sorted.sort_by_key(|e| e.start);
            let mut cursor = 0usize;
            for e in sorted {
                out.push_str(text::char_slice(&sentence.text, cursor, e.start));
                out.push('<');
                out.push_str(e.halluc_type.tag_name());
                out.push_str("><del>");
                out.push_str(&e.original);
                out.push_str("</del><ins>");
                out.push_str(&e.replacement);
                out.push_str("</ins></");
                out.push_str(e.halluc_type.tag_name());
                out.push('>');
                cursor = e.end;
            }
            let len = sentence.text.chars().count();
            out.push_str(text::char_slice(&sentence.text, cursor, len));
        }
        other => {
            let tag = other
                .sentence_level_type()
                .expect("sentence-level label")
                .tag_name();
            out.push('<');
            out.push_str(tag);
            out.push('>');
            out.push_str(&sentence.text);
            out.push_str("</");
            out.push_str(tag);
            out.push('>');
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Errors raised while parsing an annotated string. Positions are
/// Unicode-scalar offsets into the input.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unbalanced tag `{name}` at char {pos}")]
    UnbalancedTag { pos: usize, name: String },
    #[error("unknown tag name `{name}` at char {pos}")]
    UnknownTagName { pos: usize, name: String },
    #[error("illegal tag structure at char {pos}: {message}")]
    NestedSpanTags { pos: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagName {
    Halluc(HallucType),
    Del,
    Ins,
}

impl TagName {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "del" => Some(TagName::Del),
            "ins" => Some(TagName::Ins),
            other => HallucType::from_tag_name(other).map(TagName::Halluc),
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            TagName::Halluc(t) => t.tag_name(),
            TagName::Del => "del",
            TagName::Ins => "ins",
        }
    }
}

#[derive(Debug)]
enum Tok {
    Text(String),
    /// `(name, char position of the opening '<')`
    Open(TagName, usize),
    Close(TagName, usize),
}

/// Scans the input into text runs and recognized tags. A `<` that does not
/// introduce `</?letters>` is treated as literal text; a well-shaped tag
/// with an unknown name is an error.
fn tokenize(input: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = input.chars().collect();
    let n = chars.len();
    let mut toks = Vec::new();
    let mut text_buf = String::new();
    let mut i = 0usize;

    while i < n {
        if chars[i] == '<' {
            let mut j = i + 1;
            let closing = j < n && chars[j] == '/';
            if closing {
                j += 1;
            }
            let name_start = j;
            while j < n && chars[j].is_ascii_alphabetic() {
                j += 1;
            }
            if j > name_start && j < n && chars[j] == '>' {
                let name: String = chars[name_start..j].iter().collect();
                match TagName::parse(&name) {
                    Some(tag) => {
                        if !text_buf.is_empty() {
                            toks.push(Tok::Text(std::mem::take(&mut text_buf)));
                        }
                        if closing {
                            toks.push(Tok::Close(tag, i));
                        } else {
                            toks.push(Tok::Open(tag, i));
                        }
                        i = j + 1;
                        continue;
                    }
                    None => {
                        return Err(ParseError::UnknownTagName { pos: i, name });
                    }
                }
            }
            // Not a tag shape: literal '<'.
            text_buf.push('<');
            i += 1;
        } else {
            text_buf.push(chars[i]);
            i += 1;
        }
    }
    if !text_buf.is_empty() {
        toks.push(Tok::Text(text_buf));
    }
    Ok(toks)
}

/// A span edit located in the materialized (original-form) text of a flow
/// region, in char offsets of that region.
#[derive(Debug)]
struct FlowSpan {
    start: usize,
    end: usize,
    halluc_type: HallucType,
    original: String,
    replacement: String,
}

#[derive(Default)]
struct DocBuilder {
    sentences: Vec<AnnotatedSentence>,
    separators: Vec<String>,
    pending_sep: String,
}

impl DocBuilder {
    fn push_sentence(&mut self, text: String, label: SentenceLabel) {
        self.separators.push(std::mem::take(&mut self.pending_sep));
        self.sentences.push(AnnotatedSentence { text, label });
    }

    fn finish(mut self) -> Result<AnnotatedDocument, ParseError> {
        self.separators.push(self.pending_sep);
        AnnotatedDocument::from_parts(self.sentences, self.separators).map_err(|e| {
            // Parsing constructed these parts; a validation failure here is
            // a structural conflict in the input (e.g. spans that cannot be
            // attributed to one sentence).
            ParseError::NestedSpanTags {
                pos: 0,
                message: e.to_string(),
            }
        })
    }
}

/// Parses an annotated string into a document. Untagged text is segmented
/// with the rule-based sentence splitter; each sentence-level tag contributes
/// exactly one sentence; span tags attach to the sentence containing them.
pub fn parse_annotated(input: &str) -> Result<AnnotatedDocument, ParseError> {
    let toks = tokenize(input)?;
    let mut builder = DocBuilder::default();
    let mut flow: Vec<FlowSeg> = Vec::new();

    let mut iter = toks.into_iter().peekable();
    while let Some(tok) = iter.next() {
        match tok {
            Tok::Text(t) => flow.push(FlowSeg::Text(t)),
            Tok::Open(TagName::Halluc(t), pos) if !t.span_level() => {
                flush_flow(&mut builder, &mut flow)?;
                let mut inner = String::new();
                loop {
                    match iter.next() {
                        Some(Tok::Text(t)) => inner.push_str(&t),
                        Some(Tok::Close(TagName::Halluc(c), _)) if c == t => break,
                        Some(Tok::Open(other, p)) | Some(Tok::Close(other, p)) => {
                            return Err(ParseError::NestedSpanTags {
                                pos: p,
                                message: format!(
                                    "tag `{}` inside sentence-level `{}`",
                                    other.as_str(),
                                    t.tag_name()
                                ),
                            });
                        }
                        None => {
                            return Err(ParseError::UnbalancedTag {
                                pos,
                                name: t.tag_name().to_string(),
                            });
                        }
                    }
                }
                let label = match t {
                    HallucType::Contradictory => SentenceLabel::Contradictory,
                    HallucType::Invented => SentenceLabel::Invented,
                    HallucType::Subjective => SentenceLabel::Subjective,
                    HallucType::Unverifiable => SentenceLabel::Unverifiable,
                    _ => unreachable!("span-level filtered above"),
                };
                builder.push_sentence(inner, label);
            }
            Tok::Open(TagName::Halluc(t), pos) => {
                // Entity or Relation: expect <del>…</del><ins>…</ins></t>.
                let (original, replacement) = parse_span_body(&mut iter, t, pos)?;
                if original.is_empty() || original.chars().all(char::is_whitespace) {
                    return Err(ParseError::NestedSpanTags {
                        pos,
                        message: "span original must contain non-whitespace text".to_string(),
                    });
                }
                flow.push(FlowSeg::Span {
                    halluc_type: t,
                    original,
                    replacement,
                });
            }
            Tok::Open(marker @ (TagName::Del | TagName::Ins), pos) => {
                return Err(ParseError::NestedSpanTags {
                    pos,
                    message: format!("`{}` outside an entity/relation tag", marker.as_str()),
                });
            }
            Tok::Close(tag, pos) => {
                return Err(ParseError::UnbalancedTag {
                    pos,
                    name: tag.as_str().to_string(),
                });
            }
        }
    }
    flush_flow(&mut builder, &mut flow)?;
    builder.finish()
}

enum FlowSeg {
    Text(String),
    Span {
        halluc_type: HallucType,
        original: String,
        replacement: String,
    },
}

fn parse_span_body(
    iter: &mut std::iter::Peekable<std::vec::IntoIter<Tok>>,
    tag: HallucType,
    open_pos: usize,
) -> Result<(String, String), ParseError> {
    let expect_open = |tok: Option<Tok>, want: TagName| -> Result<usize, ParseError> {
        match tok {
            Some(Tok::Open(t, p)) if t == want => Ok(p),
            Some(Tok::Open(other, p)) | Some(Tok::Close(other, p)) => {
                Err(ParseError::NestedSpanTags {
                    pos: p,
                    message: format!(
                        "expected `<{}>` inside `{}`, found `{}`",
                        want.as_str(),
                        tag.tag_name(),
                        other.as_str()
                    ),
                })
            }
            Some(Tok::Text(_)) => Err(ParseError::NestedSpanTags {
                pos: open_pos,
                message: format!(
                    "expected `<{}>` inside `{}`, found text",
                    want.as_str(),
                    tag.tag_name()
                ),
            }),
            None => Err(ParseError::UnbalancedTag {
                pos: open_pos,
                name: tag.tag_name().to_string(),
            }),
        }
    };

    let collect_until_close = |iter: &mut std::iter::Peekable<std::vec::IntoIter<Tok>>,
                               want: TagName,
                               at: usize|
     -> Result<String, ParseError> {
        let mut buf = String::new();
        loop {
            match iter.next() {
                Some(Tok::Text(t)) => buf.push_str(&t),
                Some(Tok::Close(t, _)) if t == want => return Ok(buf),
                Some(Tok::Open(other, p)) | Some(Tok::Close(other, p)) => {
                    return Err(ParseError::NestedSpanTags {
                        pos: p,
                        message: format!(
                            "tag `{}` inside `<{}>`",
                            other.as_str(),
                            want.as_str()
                        ),
                    });
                }
                None => {
                    return Err(ParseError::UnbalancedTag {
                        pos: at,
                        name: want.as_str().to_string(),
                    })
                }
            }
        }
    };

    let del_pos = expect_open(iter.next(), TagName::Del)?;
    let original = collect_until_close(iter, TagName::Del, del_pos)?;
    let ins_pos = expect_open(iter.next(), TagName::Ins)?;
    let replacement = collect_until_close(iter, TagName::Ins, ins_pos)?;
    match iter.next() {
        Some(Tok::Close(TagName::Halluc(t), _)) if t == tag => Ok((original, replacement)),
        Some(Tok::Open(other, p)) | Some(Tok::Close(other, p)) => {
            Err(ParseError::NestedSpanTags {
                pos: p,
                message: format!(
                    "expected `</{}>`, found `{}`",
                    tag.tag_name(),
                    other.as_str()
                ),
            })
        }
        Some(Tok::Text(_)) => Err(ParseError::NestedSpanTags {
            pos: open_pos,
            message: format!("expected `</{}>`, found text", tag.tag_name()),
        }),
        None => Err(ParseError::UnbalancedTag {
            pos: open_pos,
            name: tag.tag_name().to_string(),
        }),
    }
}

/// Materializes a flow region (text runs plus inline span edits), segments
/// it into sentences, and emits the sentences into the builder. Sentence
/// boundaries falling inside a span are merged away; whitespace-only flows
/// become separators.
fn flush_flow(builder: &mut DocBuilder, flow: &mut Vec<FlowSeg>) -> Result<(), ParseError> {
    if flow.is_empty() {
        return Ok(());
    }
    let segs = std::mem::take(flow);

    let mut materialized = String::new();
    let mut char_len = 0usize;
    let mut spans: Vec<FlowSpan> = Vec::new();
    for seg in segs {
        match seg {
            FlowSeg::Text(t) => {
                char_len += t.chars().count();
                materialized.push_str(&t);
            }
            FlowSeg::Span {
                halluc_type,
                original,
                replacement,
            } => {
                let start = char_len;
                char_len += original.chars().count();
                spans.push(FlowSpan {
                    start,
                    end: char_len,
                    halluc_type,
                    original: original.clone(),
                    replacement,
                });
                materialized.push_str(&original);
            }
        }
    }

    if spans.is_empty() && materialized.chars().all(char::is_whitespace) {
        builder.pending_sep.push_str(&materialized);
        return Ok(());
    }

    let split = split_sentences(&materialized);

    // Char ranges of each sentence and of each separator in `materialized`.
    let mut sent_ranges: Vec<(usize, usize)> = Vec::with_capacity(split.sentences.len());
    let mut sep_texts: Vec<String> = Vec::with_capacity(split.separators.len());
    {
        let mut pos = 0usize;
        for (i, sep) in split.separators.iter().enumerate() {
            pos += sep.chars().count();
            sep_texts.push(sep.clone());
            if let Some(s) = split.sentences.get(i) {
                let len = s.chars().count();
                sent_ranges.push((pos, pos + len));
                pos += len;
            }
        }
    }
    let mut sent_texts = split.sentences;

    // Merge any sentence boundary that falls strictly inside a span.
    let mut i = 0;
    while i + 1 < sent_texts.len() {
        let end_i = sent_ranges[i].1;
        let straddles = spans.iter().any(|sp| sp.start < end_i && sp.end > end_i);
        if straddles {
            let merged_text = format!("{}{}{}", sent_texts[i], sep_texts[i + 1], sent_texts[i + 1]);
            sent_texts[i] = merged_text;
            sent_ranges[i].1 = sent_ranges[i + 1].1;
            sent_texts.remove(i + 1);
            sent_ranges.remove(i + 1);
            sep_texts.remove(i + 1);
        } else {
            i += 1;
        }
    }

    builder.pending_sep.push_str(&sep_texts[0]);
    for (i, sent) in sent_texts.into_iter().enumerate() {
        let (s_start, s_end) = sent_ranges[i];
        let mut edits: Vec<SpanEdit> = Vec::new();
        for sp in &spans {
            if sp.start >= s_start && sp.end <= s_end {
                edits.push(SpanEdit {
                    halluc_type: sp.halluc_type,
                    start: sp.start - s_start,
                    end: sp.end - s_start,
                    original: sp.original.clone(),
                    replacement: sp.replacement.clone(),
                });
            }
        }
        let label = if edits.is_empty() {
            SentenceLabel::Factual
        } else {
            SentenceLabel::Edited(edits)
        };
        builder.push_sentence(sent, label);
        builder.pending_sep = sep_texts[i + 1].clone();
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SentenceRepr {
    text: String,
    label: String,
    span_edits: Vec<SpanEdit>,
}

#[derive(Serialize, Deserialize)]
struct DocumentRepr {
    sentences: Vec<SentenceRepr>,
    separators: Vec<String>,
}

impl Serialize for AnnotatedDocument {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = DocumentRepr {
            sentences: self
                .sentences
                .iter()
                .map(|s| SentenceRepr {
                    text: s.text.clone(),
                    label: s.label.name().to_string(),
                    span_edits: s.label.span_edits().to_vec(),
                })
                .collect(),
            separators: self.separators.clone(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AnnotatedDocument {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = DocumentRepr::deserialize(deserializer)?;
        let mut sentences = Vec::with_capacity(repr.sentences.len());
        for s in repr.sentences {
            let label = match s.label.as_str() {
                "factual" => SentenceLabel::Factual,
                "contradictory" => SentenceLabel::Contradictory,
                "invented" => SentenceLabel::Invented,
                "subjective" => SentenceLabel::Subjective,
                "unverifiable" => SentenceLabel::Unverifiable,
                "edited" => SentenceLabel::Edited(s.span_edits),
                other => return Err(D::Error::custom(format!("unknown label `{other}`"))),
            };
            sentences.push(AnnotatedSentence {
                text: s.text,
                label,
            });
        }
        AnnotatedDocument::from_parts(sentences, repr.separators).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entity_span_edit() {
        let doc = parse_annotated(
            "Italo Calvino was a <entity><del>football player</del><ins>novelist</ins></entity>.",
        )
        .unwrap();
        assert_eq!(doc.sentences().len(), 1);
        let s = &doc.sentences()[0];
        assert_eq!(s.text, "Italo Calvino was a football player.");
        match &s.label {
            SentenceLabel::Edited(edits) => {
                assert_eq!(edits.len(), 1);
                let e = &edits[0];
                assert_eq!(e.halluc_type, HallucType::Entity);
                assert_eq!(e.original, "football player");
                assert_eq!(e.replacement, "novelist");
                assert_eq!((e.start, e.end), (20, 35));
            }
            other => panic!("expected Edited, got {other:?}"),
        }
    }

    #[test]
    fn untagged_text_is_factual() {
        let doc = parse_annotated("Calvino wrote novels.").unwrap();
        assert_eq!(doc.sentences().len(), 1);
        assert_eq!(doc.sentences()[0].label, SentenceLabel::Factual);
    }

    #[test]
    fn parses_sentence_level_tag() {
        let doc =
            parse_annotated("<invented>Calvino wrote a novel named Iron Hammer and Water.</invented>")
                .unwrap();
        assert_eq!(doc.sentences().len(), 1);
        assert_eq!(doc.sentences()[0].label, SentenceLabel::Invented);
        assert!(doc.sentences()[0].label.span_edits().is_empty());
    }

    #[test]
    fn strip_policies() {
        let doc = parse_annotated(
            "Italo Calvino was a <entity><del>football player</del><ins>novelist</ins></entity>.",
        )
        .unwrap();
        assert_eq!(
            doc.strip_annotations(StripPolicy::ApplyReplacements),
            "Italo Calvino was a novelist."
        );
        assert_eq!(
            doc.strip_annotations(StripPolicy::KeepOriginal),
            "Italo Calvino was a football player."
        );
    }

    #[test]
    fn strip_is_identity_without_labels() {
        let doc = parse_annotated("Plain one. Plain two.").unwrap();
        assert_eq!(
            doc.strip_annotations(StripPolicy::ApplyReplacements),
            "Plain one. Plain two."
        );
        assert_eq!(doc.source_plain_text(), "Plain one. Plain two.");
    }

    #[test]
    fn serialize_wraps_subjective() {
        let doc = AnnotatedDocument::from_parts(
            vec![AnnotatedSentence {
                text: "Calvino is the best writer in the world.".to_string(),
                label: SentenceLabel::Subjective,
            }],
            vec![String::new(), String::new()],
        )
        .unwrap();
        assert_eq!(
            doc.serialize(),
            "<subjective>Calvino is the best writer in the world.</subjective>"
        );
    }

    #[test]
    fn round_trips_mixed_document() {
        let input = "Intro sentence. <contradictory>Calvino is widely considered the GOAT in basketball.</contradictory> The cat was <relation><del>barking</del><ins>meowing</ins></relation> loudly.\n<unverifiable>Calvino liked to have a small pudding after dinner.</unverifiable>";
        let doc = parse_annotated(input).unwrap();
        assert_eq!(doc.serialize(), input);
        assert_eq!(doc.sentences().len(), 4);
    }

    #[test]
    fn multiple_spans_in_one_sentence() {
        let input = "The <entity><del>dog</del><ins>cat</ins></entity> was <relation><del>barking</del><ins>meowing</ins></relation> loudly.";
        let doc = parse_annotated(input).unwrap();
        assert_eq!(doc.sentences().len(), 1);
        let sets = doc.sentence_label_sets();
        let expected: LabelSet = [
            Label::Halluc(HallucType::Entity),
            Label::Halluc(HallucType::Relation),
        ]
        .into_iter()
        .collect();
        assert_eq!(sets[0], expected);
        assert_eq!(doc.serialize(), input);
    }

    #[test]
    fn label_sets_for_plain_labels() {
        let doc = parse_annotated(
            "Fine. <contradictory>Wrong premise entirely.</contradictory>",
        )
        .unwrap();
        let sets = doc.sentence_label_sets();
        assert_eq!(sets[0], [Label::Factual].into_iter().collect());
        assert_eq!(
            sets[1],
            [Label::Halluc(HallucType::Contradictory)].into_iter().collect()
        );
    }

    #[test]
    fn unknown_tag_is_rejected() {
        let err = parse_annotated("bad <madeup>x</madeup>").unwrap_err();
        assert!(matches!(err, ParseError::UnknownTagName { .. }));
    }

    #[test]
    fn unbalanced_tag_reports_position() {
        let err = parse_annotated("a <invented>never closed").unwrap_err();
        match err {
            ParseError::UnbalancedTag { pos, name } => {
                assert_eq!(pos, 2);
                assert_eq!(name, "invented");
            }
            other => panic!("expected UnbalancedTag, got {other:?}"),
        }
    }

    #[test]
    fn span_tags_may_not_nest() {
        let err = parse_annotated(
            "<entity><del>a <relation><del>b</del><ins>c</ins></relation></del><ins>d</ins></entity>",
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::NestedSpanTags { .. }));
    }

    #[test]
    fn sentence_tag_may_not_contain_span_tags() {
        let err = parse_annotated(
            "<invented>a <entity><del>b</del><ins>c</ins></entity></invented>",
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::NestedSpanTags { .. }));
    }

    #[test]
    fn stray_del_is_rejected() {
        let err = parse_annotated("text <del>x</del>").unwrap_err();
        assert!(matches!(err, ParseError::NestedSpanTags { .. }));
    }

    #[test]
    fn literal_angle_bracket_passes_through() {
        let doc = parse_annotated("We know 3 < 5 holds.").unwrap();
        assert_eq!(doc.sentences()[0].text, "We know 3 < 5 holds.");
        assert_eq!(doc.serialize(), "We know 3 < 5 holds.");
    }

    #[test]
    fn span_straddling_boundary_merges_sentences() {
        let input = "<entity><del>A. B</del><ins>X</ins></entity> rest.";
        let doc = parse_annotated(input).unwrap();
        assert_eq!(doc.sentences().len(), 1);
        assert_eq!(doc.sentences()[0].text, "A. B rest.");
        assert_eq!(doc.serialize(), input);
    }

    #[test]
    fn whitespace_between_tagged_sentences_is_preserved() {
        let input = "<subjective>First one.</subjective>\n\n<invented>Second one.</invented>  ";
        let doc = parse_annotated(input).unwrap();
        assert_eq!(doc.separators(), &["", "\n\n", "  "]);
        assert_eq!(doc.serialize(), input);
    }

    #[test]
    fn overlapping_edits_rejected_by_builder() {
        let err = AnnotatedDocument::from_parts(
            vec![AnnotatedSentence {
                text: "abcdef".to_string(),
                label: SentenceLabel::Edited(vec![
                    SpanEdit {
                        halluc_type: HallucType::Entity,
                        start: 0,
                        end: 3,
                        original: "abc".to_string(),
                        replacement: "x".to_string(),
                    },
                    SpanEdit {
                        halluc_type: HallucType::Relation,
                        start: 2,
                        end: 5,
                        original: "cde".to_string(),
                        replacement: "y".to_string(),
                    },
                ]),
            }],
            vec![String::new(), String::new()],
        )
        .unwrap_err();
        assert_eq!(err, DocumentError::OverlappingSpans { sentence: 0 });
    }

    #[test]
    fn json_round_trip() {
        let doc = parse_annotated(
            "Ok. <entity><del>wrong</del><ins>right</ins></entity> words here.",
        )
        .unwrap();
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains("\"span_edits\""));
        let back: AnnotatedDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.serialize(), doc.serialize());
    }

    #[test]
    fn partition_flags() {
        assert!(HallucType::Entity.verifiable() && HallucType::Entity.modifiable());
        assert!(HallucType::Relation.verifiable() && HallucType::Relation.modifiable());
        assert!(HallucType::Contradictory.verifiable());
        assert!(!HallucType::Contradictory.modifiable());
        for t in [HallucType::Invented, HallucType::Subjective, HallucType::Unverifiable] {
            assert!(!t.verifiable() && !t.modifiable());
        }
    }

    #[test]
    fn multibyte_offsets_are_char_based() {
        let input = "Héllo wörld was <entity><del>fälse</del><ins>wahr</ins></entity> here.";
        let doc = parse_annotated(input).unwrap();
        let s = &doc.sentences()[0];
        let e = &s.label.span_edits()[0];
        assert_eq!(crate::text::char_slice(&s.text, e.start, e.end), "fälse");
        assert_eq!(doc.serialize(), input);
    }
}
