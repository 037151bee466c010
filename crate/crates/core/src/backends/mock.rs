//! Deterministic test backends: a scripted chat mock and a hash-based
//! embedding.

use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::{BackendError, ChatBackend, ChatRequest, EmbeddingBackend, EmbeddingVector};

#[derive(Debug, Clone)]
enum Matcher {
    Substring(String),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

/// One scripted response. `max_uses` limits how often the rule fires, which
/// lets a script answer differently on a retry of the same prompt.
#[derive(Debug, Clone)]
pub struct MockRule {
    matcher: Matcher,
    response: String,
    max_uses: Option<u64>,
}

/// An ordered rule list over the user prompt; the first matching,
/// non-exhausted rule wins. Lookup is deterministic.
#[derive(Debug, Clone, Default)]
pub struct MockScript {
    rules: Vec<MockRule>,
    default_response: Option<String>,
}

#[derive(Deserialize)]
struct RuleRepr {
    substring: Option<String>,
    regex: Option<String>,
    response: String,
    max_uses: Option<u64>,
}

#[derive(Deserialize)]
struct ScriptRepr {
    #[serde(default)]
    rules: Vec<RuleRepr>,
    default_response: Option<String>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rule matching any prompt containing `needle`.
    pub fn rule(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            matcher: Matcher::Substring(needle.into()),
            response: response.into(),
            max_uses: None,
        });
        self
    }

    /// Substring rule that fires at most once.
    pub fn rule_once(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            matcher: Matcher::Substring(needle.into()),
            response: response.into(),
            max_uses: Some(1),
        });
        self
    }

    /// Rule matching prompts against a regular expression.
    pub fn regex_rule(mut self, pattern: &str, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            matcher: Matcher::Pattern(Regex::new(pattern).expect("valid mock regex")),
            response: response.into(),
            max_uses: None,
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    /// Loads a script from JSON:
    /// `{"rules":[{"substring":"KEY","response":"...","max_uses":1},
    ///            {"regex":"...","response":"..."}],
    ///   "default_response":"..."}`
    pub fn from_json_str(json: &str) -> Result<Self, String> {
        let repr: ScriptRepr = serde_json::from_str(json).map_err(|e| e.to_string())?;
        let mut script = MockScript {
            rules: Vec::with_capacity(repr.rules.len()),
            default_response: repr.default_response,
        };
        for (i, rule) in repr.rules.into_iter().enumerate() {
            let matcher = match (rule.substring, rule.regex) {
                (Some(s), None) => Matcher::Substring(s),
                (None, Some(p)) => {
                    Matcher::Pattern(Regex::new(&p).map_err(|e| format!("rule {i}: {e}"))?)
                }
                _ => {
                    return Err(format!(
                        "rule {i}: exactly one of `substring`/`regex` required"
                    ))
                }
            };
            script.rules.push(MockRule {
                matcher,
                response: rule.response,
                max_uses: rule.max_uses,
            });
        }
        Ok(script)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self, String> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| format!("reading {}: {e}", path.display()))?;
        Self::from_json_str(&json)
    }
}

/// Chat backend answering from a [`MockScript`]. Use counters are behind a
/// mutex, so shared handles stay deterministic under concurrency.
pub struct MockChatBackend {
    script: MockScript,
    uses: Mutex<Vec<u64>>,
    calls: std::sync::atomic::AtomicU64,
}

impl MockChatBackend {
    pub fn new(script: MockScript) -> Self {
        let n = script.rules.len();
        Self {
            script,
            uses: Mutex::new(vec![0; n]),
            calls: std::sync::atomic::AtomicU64::new(0),
        }
    }

    /// Total chat calls served so far.
    pub fn call_count(&self) -> u64 {
        self.calls.load(std::sync::atomic::Ordering::Relaxed)
    }
}

impl ChatBackend for MockChatBackend {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        req.validate()?;
        self.calls
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let mut uses = self.uses.lock().expect("mock uses lock");
        for (i, rule) in self.script.rules.iter().enumerate() {
            if let Some(max) = rule.max_uses {
                if uses[i] >= max {
                    continue;
                }
            }
            if rule.matcher.matches(&req.user_prompt) {
                uses[i] += 1;
                return Ok(rule.response.clone());
            }
        }
        match &self.script.default_response {
            Some(resp) => Ok(resp.clone()),
            None => Err(BackendError::MockMiss {
                prompt_head: req.user_prompt.chars().take(60).collect(),
            }),
        }
    }
}

const EMBED_DIM: usize = 128;

fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic embedding by seeded feature hashing of character trigrams
/// into a 128-dim unit vector.
///
/// For each trigram `g` of the text's chars (texts shorter than three chars
/// contribute themselves as a single gram), hash the seed's little-endian
/// bytes followed by `g`'s UTF-8 bytes with FNV-1a 64. Bucket = `hash % 128`;
/// sign = `+1` if bit 7 of the hash is zero, else `-1`. The accumulated
/// vector is L2-normalized. Should every gram cancel, bucket
/// `fnv1a64(text) % 128` is set to 1 before normalizing, so non-empty text
/// never embeds to zero.
pub struct HashEmbeddingBackend {
    seed: u64,
}

impl HashEmbeddingBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0.0f64; EMBED_DIM];
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return EmbeddingVector::new(acc);
        }
        let mut grams: Vec<String> = Vec::new();
        if chars.len() < 3 {
            grams.push(text.to_string());
        } else {
            for w in chars.windows(3) {
                grams.push(w.iter().collect());
            }
        }
        for gram in &grams {
            let h = fnv1a64(
                self.seed
                    .to_le_bytes()
                    .into_iter()
                    .chain(gram.bytes()),
            );
            let bucket = (h % EMBED_DIM as u64) as usize;
            let sign = if (h >> 7) & 1 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm_sq: f64 = acc.iter().map(|v| v * v).sum();
        if norm_sq == 0.0 {
            let bucket = (fnv1a64(text.bytes()) % EMBED_DIM as u64) as usize;
            acc[bucket] = 1.0;
            return EmbeddingVector::new(acc);
        }
        let norm = norm_sq.sqrt();
        for v in &mut acc {
            *v /= norm;
        }
        EmbeddingVector::new(acc)
    }
}

impl EmbeddingBackend for HashEmbeddingBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let backend = MockChatBackend::new(
            MockScript::new()
                .rule("CLASSIFY_VERIFIABILITY", "CONTRADICTED")
                .rule("CLASSIFY", "SUPPORTED"),
        );
        let req = ChatRequest::new("sys", "please CLASSIFY_VERIFIABILITY this");
        assert_eq!(backend.chat_complete(&req).unwrap(), "CONTRADICTED");
    }

    #[test]
    fn default_answers_anything() {
        let backend = MockChatBackend::new(MockScript::new().with_default("OK"));
        let req = ChatRequest::new("sys", "whatever");
        assert_eq!(backend.chat_complete(&req).unwrap(), "OK");
    }

    #[test]
    fn miss_without_default_errors() {
        let backend = MockChatBackend::new(MockScript::new().rule("X", "Y"));
        let req = ChatRequest::new("sys", "no match here");
        assert!(matches!(
            backend.chat_complete(&req),
            Err(BackendError::MockMiss { .. })
        ));
    }

    #[test]
    fn exhausted_rule_falls_through() {
        let backend = MockChatBackend::new(
            MockScript::new()
                .rule_once("KEY", "first")
                .rule("KEY", "second"),
        );
        let req = ChatRequest::new("sys", "KEY");
        assert_eq!(backend.chat_complete(&req).unwrap(), "first");
        assert_eq!(backend.chat_complete(&req).unwrap(), "second");
        assert_eq!(backend.chat_complete(&req).unwrap(), "second");
    }

    #[test]
    fn script_json_parsing() {
        let script = MockScript::from_json_str(
            r#"{"rules":[{"substring":"A","response":"ra","max_uses":1},
                         {"regex":"b+","response":"rb"}],
                "default_response":"dflt"}"#,
        )
        .unwrap();
        let backend = MockChatBackend::new(script);
        assert_eq!(
            backend
                .chat_complete(&ChatRequest::new("s", "has A in it"))
                .unwrap(),
            "ra"
        );
        assert_eq!(
            backend.chat_complete(&ChatRequest::new("s", "bbb")).unwrap(),
            "rb"
        );
        assert_eq!(
            backend.chat_complete(&ChatRequest::new("s", "zzz")).unwrap(),
            "dflt"
        );
    }

    #[test]
    fn script_rejects_ambiguous_rule() {
        let err = MockScript::from_json_str(
            r#"{"rules":[{"substring":"a","regex":"b","response":"r"}]}"#,
        )
        .unwrap_err();
        assert!(err.contains("exactly one"));
    }

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let backend = HashEmbeddingBackend::new(7);
        let a = backend.embed(&["hello world".to_string()]).unwrap();
        let b = backend.embed(&["hello world".to_string()]).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a[0].values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn different_seed_changes_embedding() {
        let a = HashEmbeddingBackend::new(1)
            .embed(&["same text".to_string()])
            .unwrap();
        let b = HashEmbeddingBackend::new(2)
            .embed(&["same text".to_string()])
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn nonempty_text_never_embeds_to_zero() {
        let backend = HashEmbeddingBackend::new(0);
        for text in ["a", "xy", "the quick brown fox", "."] {
            let v = backend.embed(&[text.to_string()]).unwrap();
            assert!(!v[0].is_zero(), "zero embedding for {text:?}");
        }
    }

    #[test]
    fn batch_equals_elementwise() {
        let backend = HashEmbeddingBackend::new(3);
        let texts: Vec<String> = ["one", "two", "three"]
            .into_iter()
            .map(String::from)
            .collect();
        let batch = backend.embed(&texts).unwrap();
        for (i, t) in texts.iter().enumerate() {
            let single = backend.embed(std::slice::from_ref(t)).unwrap();
            assert_eq!(batch[i], single[0]);
        }
    }
}
