//! Sentence segmentation and whitespace-token helpers shared by the
//! annotation grammar, the evidence chunker, and the pipeline.

use std::collections::HashSet;
use std::sync::OnceLock;

/// Number of whitespace-delimited tokens in `s`.
pub fn token_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Keeps at most the last `budget` whitespace tokens of `s`. When truncation
/// occurs the surviving tokens are rejoined with single spaces.
pub fn truncate_to_last_tokens(s: &str, budget: usize) -> String {
    let tokens: Vec<&str> = s.split_whitespace().collect();
    if tokens.len() <= budget {
        return s.to_string();
    }
    tokens[tokens.len() - budget..].join(" ")
}

/// A segmentation that can reproduce its input exactly:
///
/// `input == separators[0] + sentences[0] + separators[1] + ... + separators[n]`
///
/// Sentences never start or end with whitespace; separators are
/// whitespace-only (possibly empty). `separators.len() == sentences.len() + 1`
/// always holds, so an empty input yields no sentences and one separator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSplit {
    pub sentences: Vec<String>,
    pub separators: Vec<String>,
}

impl SentenceSplit {
    pub fn reassemble(&self) -> String {
        let mut out = String::new();
        for (i, sep) in self.separators.iter().enumerate() {
            out.push_str(sep);
            if let Some(s) = self.sentences.get(i) {
                out.push_str(s);
            }
        }
        out
    }
}

fn abbreviations() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        [
            "mr.", "mrs.", "ms.", "dr.", "prof.", "rev.", "hon.", "st.", "jr.", "sr.", "vs.",
            "etc.", "e.g.", "i.e.", "cf.", "al.", "inc.", "ltd.", "co.", "corp.", "dept.",
            "univ.", "fig.", "no.", "vol.", "pp.", "u.s.", "u.k.", "approx.",
        ]
        .into_iter()
        .collect()
    })
}

/// True when the period at `chars[idx]` terminates a known abbreviation
/// (e.g. "Dr." or "e.g."). The candidate word is the maximal run of letters
/// and periods ending at `idx`, compared case-insensitively.
fn ends_abbreviation(chars: &[(usize, char)], idx: usize) -> bool {
    let mut start = idx;
    while start > 0 {
        let c = chars[start - 1].1;
        if c.is_alphabetic() || c == '.' {
            start -= 1;
        } else {
            break;
        }
    }
    let word: String = chars[start..=idx].iter().map(|(_, c)| c).collect();
    if word.len() > 8 {
        return false;
    }
    abbreviations().contains(word.to_lowercase().as_str())
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Rule-based sentence splitter. A sentence ends at terminal punctuation
/// (`.`, `?`, `!`, plus any trailing closing quotes/brackets) followed by
/// whitespace or end of input. Two guards apply to `.` only: known
/// abbreviations never end a sentence, and neither does a period whose next
/// word starts with a lowercase letter. A final unterminated run of text
/// forms the last sentence.
pub fn split_sentences(text: &str) -> SentenceSplit {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let byte_at = |i: usize| -> usize {
        if i < n {
            chars[i].0
        } else {
            text.len()
        }
    };

    let mut sentences = Vec::new();
    let mut separators = Vec::new();

    let mut i = 0;
    while i < n && chars[i].1.is_whitespace() {
        i += 1;
    }
    separators.push(text[..byte_at(i)].to_string());

    let mut sent_start = i;
    while i < n {
        let c = chars[i].1;
        if c == '.' || c == '?' || c == '!' {
            let mut j = i + 1;
            while j < n && is_closer(chars[j].1) {
                j += 1;
            }
            let at_end = j >= n;
            let ws_next = !at_end && chars[j].1.is_whitespace();
            if at_end || ws_next {
                let mut boundary = true;
                if c == '.' {
                    if ends_abbreviation(&chars, i) {
                        boundary = false;
                    } else if !at_end {
                        let mut k = j;
                        while k < n && chars[k].1.is_whitespace() {
                            k += 1;
                        }
                        if k < n && chars[k].1.is_lowercase() {
                            boundary = false;
                        }
                    }
                }
                if boundary {
                    sentences.push(text[byte_at(sent_start)..byte_at(j)].to_string());
                    let mut k = j;
                    while k < n && chars[k].1.is_whitespace() {
                        k += 1;
                    }
                    separators.push(text[byte_at(j)..byte_at(k)].to_string());
                    i = k;
                    sent_start = k;
                    continue;
                }
            }
        }
        i += 1;
    }

    if sent_start < n {
        sentences.push(text[byte_at(sent_start)..].to_string());
        separators.push(String::new());
    }

    debug_assert_eq!(separators.len(), sentences.len() + 1);
    SentenceSplit {
        sentences,
        separators,
    }
}

/// Byte offset of the `char_idx`-th Unicode scalar in `s`.
/// `char_idx` equal to the char length maps to `s.len()`.
pub fn char_to_byte(s: &str, char_idx: usize) -> usize {
    s.char_indices()
        .nth(char_idx)
        .map(|(b, _)| b)
        .unwrap_or(s.len())
}

/// Slice `s` by Unicode-scalar offsets.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    &s[char_to_byte(s, start)..char_to_byte(s, end)]
}
