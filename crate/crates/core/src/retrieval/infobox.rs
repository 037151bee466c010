//! Infobox extraction from wikitext and conversion to declarative
//! statements.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Structured key/value facts about an article subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Infobox {
    pub subject: String,
    pub pairs: Vec<(String, String)>,
}

/// One sentence per pair: `<subject>'s <key> is <value>.` Multi-valued
/// fields were already joined with commas during cleaning.
pub fn infobox_to_statements(infobox: &Infobox) -> Vec<String> {
    infobox
        .pairs
        .iter()
        .map(|(key, value)| format!("{}'s {} is {}.", infobox.subject, key, value))
        .collect()
}

/// Finds the first `{{Infobox ...}}` template in `wikitext` and parses its
/// top-level parameters. The `name` parameter, when present, names the
/// subject; otherwise `fallback_subject` (the article title) is used.
/// Returns `None` when there is no infobox or no usable pair survives
/// cleaning.
pub fn parse_infobox(wikitext: &str, fallback_subject: &str) -> Option<Infobox> {
    let lower = wikitext.to_lowercase();
    let start = lower.find("{{infobox")?;
    let body = balanced_template(&wikitext[start..])?;

    // Drop the leading `{{Infobox <type>` segment, keep the parameters.
    let inner = &body[2..body.len() - 2];
    let parts = split_top_level(inner, '|');

    let mut subject = fallback_subject.to_string();
    let mut pairs = Vec::new();
    for part in parts.iter().skip(1) {
        let Some(eq) = find_top_level(part, '=') else {
            continue;
        };
        let key = part[..eq].trim().replace('_', " ");
        let value = clean_value(part[eq + 1..].trim());
        if key.is_empty() || value.is_empty() {
            continue;
        }
        if key.eq_ignore_ascii_case("name") {
            subject = value;
            continue;
        }
        if matches!(
            key.to_lowercase().as_str(),
            "image" | "image size" | "caption" | "signature" | "alt" | "logo"
        ) {
            continue;
        }
        pairs.push((key, value));
    }
    if pairs.is_empty() {
        None
    } else {
        Some(Infobox { subject, pairs })
    }
}

/// The `{{...}}` slice starting at the front of `s`, braces balanced.
fn balanced_template(s: &str) -> Option<&str> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"{{") {
            depth += 1;
            i += 2;
        } else if bytes[i..].starts_with(b"}}") {
            depth -= 1;
            i += 2;
            if depth == 0 {
                return Some(&s[..i]);
            }
        } else {
            i += 1;
        }
    }
    None
}

/// Splits on the ASCII byte `sep` at brace/bracket depth zero.
fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    debug_assert!(sep.is_ascii());
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0usize;
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"{{") || bytes[i..].starts_with(b"[[") {
            depth += 1;
            i += 2;
            continue;
        }
        if bytes[i..].starts_with(b"}}") || bytes[i..].starts_with(b"]]") {
            depth -= 1;
            i += 2;
            continue;
        }
        if depth == 0 && bytes[i] == sep as u8 {
            parts.push(&s[start..i]);
            start = i + 1;
        }
        i += 1;
    }
    parts.push(&s[start..]);
    parts
}

fn find_top_level(s: &str, needle: char) -> Option<usize> {
    debug_assert!(needle.is_ascii());
    let mut depth = 0i32;
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"{{") || bytes[i..].starts_with(b"[[") {
            depth += 1;
            i += 2;
            continue;
        }
        if bytes[i..].starts_with(b"}}") || bytes[i..].starts_with(b"]]") {
            depth -= 1;
            i += 2;
            continue;
        }
        if depth == 0 && bytes[i] == needle as u8 {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn regexes() -> &'static (Regex, Regex, Regex, Regex) {
    static RE: OnceLock<(Regex, Regex, Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r"(?s)<ref[^>]*/>|<ref[^>]*>.*?</ref>").expect("ref regex"),
            Regex::new(r"\[\[(?:[^\[\]|]*\|)?([^\[\]|]*)\]\]").expect("link regex"),
            Regex::new(r"<br\s*/?>").expect("br regex"),
            Regex::new(r"<[^>]+>").expect("tag regex"),
        )
    })
}

/// Strips wiki markup from an infobox value: references, links (keeping
/// labels), templates (keeping plain arguments), HTML, bold/italic quotes.
/// Bullet/line lists collapse to comma-joined values.
fn clean_value(raw: &str) -> String {
    let (re_ref, re_link, re_br, re_tag) = regexes();
    let mut value = re_ref.replace_all(raw, "").to_string();
    value = re_link.replace_all(&value, "$1").to_string();
    value = expand_templates(&value);
    value = re_br.replace_all(&value, ", ").to_string();
    value = re_tag.replace_all(&value, "").to_string();
    value = value.replace("'''", "").replace("''", "");

    // List bullets become comma separators.
    let items: Vec<&str> = value
        .split('\n')
        .map(|line| line.trim_start_matches(['*', '#', ' ', '\t']).trim())
        .filter(|line| !line.is_empty())
        .collect();
    let mut joined = items.join(", ");
    joined = joined.split_whitespace().collect::<Vec<_>>().join(" ");
    joined.trim_matches([',', ' ']).to_string()
}

/// Replaces `{{template|...}}` calls with their useful positional content.
/// Date-like templates (three leading numeric args) render `Y-M-D`; list
/// templates join their arguments with commas; anything else keeps its
/// positional arguments joined with spaces.
fn expand_templates(s: &str) -> String {
    let mut out = String::new();
    let mut rest = s;
    while let Some(pos) = rest.find("{{") {
        out.push_str(&rest[..pos]);
        match balanced_template(&rest[pos..]) {
            Some(tpl) => {
                out.push_str(&render_template(tpl));
                rest = &rest[pos + tpl.len()..];
            }
            None => {
                out.push_str(&rest[pos..]);
                return out;
            }
        }
    }
    out.push_str(rest);
    out
}

fn render_template(tpl: &str) -> String {
    let inner = &tpl[2..tpl.len() - 2];
    let parts = split_top_level(inner, '|');
    let name = parts.first().map(|p| p.trim().to_lowercase()).unwrap_or_default();
    let positional: Vec<String> = parts
        .iter()
        .skip(1)
        .filter(|p| find_top_level(p, '=').is_none())
        .map(|p| expand_templates(p.trim()))
        .filter(|p| !p.is_empty())
        .collect();

    if positional.len() >= 3 && positional[..3].iter().all(|p| p.chars().all(|c| c.is_ascii_digit())) {
        // Birth/death-date style templates.
        return format!("{}-{}-{}", positional[0], positional[1], positional[2]);
    }
    if name.contains("list") {
        return positional.join(", ");
    }
    positional.join(" ")
}
