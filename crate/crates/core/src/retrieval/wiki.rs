//! MediaWiki Action API client with an on-disk JSON cache.
//!
//! Every request is keyed by the SHA-256 of its canonical query string and
//! cached under `cache/<sha256>.json`. Fixture mode (`fixtures_only`) never
//! touches the network: a cache miss is an error, which makes runs hermetic
//! and bit-deterministic. Network calls are counted so tests can assert
//! hermeticity.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::infobox::{parse_infobox, Infobox};

pub const DEFAULT_API_URL: &str = "https://en.wikipedia.org/w/api.php";

#[derive(Debug, Error)]
pub enum WikiError {
    #[error("network failure talking to wiki api: {0}")]
    Network(String),
    #[error("wiki api error: {0}")]
    Api(String),
    #[error("page `{0}` not found")]
    PageNotFound(String),
    #[error("no search results for `{0}`")]
    EmptyResult(String),
    #[error("fixture mode: no cached response for {0}")]
    FixtureMiss(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A fetched article: markup-stripped body plus the parsed infobox, when
/// the page has one.
#[derive(Debug, Clone)]
pub struct Article {
    pub title: String,
    pub body: String,
    pub infobox: Option<Infobox>,
}

pub struct WikiClient {
    api_url: String,
    cache_dir: PathBuf,
    fixtures_only: bool,
    client: Option<reqwest::blocking::Client>,
    network_calls: AtomicU64,
}

impl WikiClient {
    pub fn new(cache_dir: impl Into<PathBuf>, fixtures_only: bool) -> Self {
        Self::with_api_url(DEFAULT_API_URL, cache_dir, fixtures_only)
    }

    pub fn with_api_url(
        api_url: impl Into<String>,
        cache_dir: impl Into<PathBuf>,
        fixtures_only: bool,
    ) -> Self {
        let client = if fixtures_only {
            None
        } else {
            reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .user_agent("pfme/0.1 (evidence retrieval)")
                .build()
                .ok()
        };
        Self {
            api_url: api_url.into(),
            cache_dir: cache_dir.into(),
            fixtures_only,
            client,
            network_calls: AtomicU64::new(0),
        }
    }

    /// HTTP requests actually issued (cache misses in online mode).
    pub fn network_call_count(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// Canonical request key: api url plus sorted query parameters.
    fn request_key(&self, params: &[(&str, &str)]) -> String {
        let mut sorted: Vec<_> = params.to_vec();
        sorted.sort_unstable();
        let query: Vec<String> = sorted.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}?{}", self.api_url, query.join("&"))
    }

    /// Cache file for a request key. Exposed so tests and the cache warmer
    /// can seed fixtures.
    pub fn cache_path_for(&self, params: &[(&str, &str)]) -> PathBuf {
        let digest = Sha256::digest(self.request_key(params).as_bytes());
        let mut name = String::with_capacity(64);
        for byte in digest {
            name.push_str(&format!("{byte:02x}"));
        }
        self.cache_dir.join(format!("{name}.json"))
    }

    fn cached_get(&self, params: &[(&str, &str)]) -> Result<serde_json::Value, WikiError> {
        let path = self.cache_path_for(params);
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            return serde_json::from_str(&text).map_err(|e| WikiError::Api(e.to_string()));
        }
        if self.fixtures_only {
            return Err(WikiError::FixtureMiss(self.request_key(params)));
        }
        let client = self
            .client
            .as_ref()
            .ok_or_else(|| WikiError::Network("client unavailable".to_string()))?;
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let response = client
            .get(&self.api_url)
            .query(params)
            .send()
            .map_err(|e| WikiError::Network(e.to_string()))?;
        if !response.status().is_success() {
            return Err(WikiError::Api(format!("status {}", response.status())));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| WikiError::Api(e.to_string()))?;
        write_atomic(&path, &serde_json::to_vec(&value).unwrap_or_default())?;
        Ok(value)
    }

    /// Title search. Returns up to `limit` titles in service order;
    /// zero hits is the distinct [`WikiError::EmptyResult`] signal.
    pub fn search(&self, term: &str, limit: usize) -> Result<Vec<String>, WikiError> {
        let limit_s = limit.to_string();
        let params = [
            ("action", "query"),
            ("list", "search"),
            ("srsearch", term),
            ("srlimit", limit_s.as_str()),
            ("format", "json"),
        ];
        let value = self.cached_get(&params)?;
        let hits = value["query"]["search"]
            .as_array()
            .ok_or_else(|| WikiError::Api("missing query.search".to_string()))?;
        let mut titles: Vec<String> = hits
            .iter()
            .filter_map(|h| h["title"].as_str().map(str::to_string))
            .collect();
        titles.truncate(limit);
        if titles.is_empty() {
            return Err(WikiError::EmptyResult(term.to_string()));
        }
        Ok(titles)
    }

    /// Fetches the plain-text extract and wikitext of `title`, parsing the
    /// infobox when one is present.
    pub fn fetch_article(&self, title: &str) -> Result<Article, WikiError> {
        let extract_params = [
            ("action", "query"),
            ("prop", "extracts"),
            ("explaintext", "1"),
            ("redirects", "1"),
            ("titles", title),
            ("format", "json"),
        ];
        let value = self.cached_get(&extract_params)?;
        let pages = value["query"]["pages"]
            .as_object()
            .ok_or_else(|| WikiError::Api("missing query.pages".to_string()))?;
        let page = pages
            .values()
            .next()
            .ok_or_else(|| WikiError::Api("empty pages".to_string()))?;
        if page.get("missing").is_some() || pages.contains_key("-1") {
            return Err(WikiError::PageNotFound(title.to_string()));
        }
        let body = page["extract"]
            .as_str()
            .ok_or_else(|| WikiError::Api("missing extract".to_string()))?
            .to_string();

        let wikitext_params = [
            ("action", "parse"),
            ("page", title),
            ("prop", "wikitext"),
            ("redirects", "1"),
            ("format", "json"),
        ];
        let infobox = match self.cached_get(&wikitext_params) {
            Ok(parse_value) => {
                if parse_value.get("error").is_some() {
                    None
                } else {
                    parse_value["parse"]["wikitext"]["*"]
                        .as_str()
                        .and_then(|wt| parse_infobox(wt, title))
                }
            }
            // Infoboxes enrich evidence but are not required.
            Err(WikiError::FixtureMiss(_)) => None,
            Err(e) => return Err(e),
        };

        Ok(Article {
            title: title.to_string(),
            body,
            infobox,
        })
    }
}

/// Write-temp-then-rename so concurrent fetchers never observe a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.subsec_nanos())
            .unwrap_or(0)
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed_fixture(client: &WikiClient, params: &[(&str, &str)], value: serde_json::Value) {
        let path = client.cache_path_for(params);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, serde_json::to_vec(&value).unwrap()).unwrap();
    }

    fn search_params<'a>(term: &'a str, limit: &'a str) -> [(&'a str, &'a str); 5] {
        [
            ("action", "query"),
            ("list", "search"),
            ("srsearch", term),
            ("srlimit", limit),
            ("format", "json"),
        ]
    }

    #[test]
    fn search_replays_fixture_without_network() {
        let dir = tempfile::tempdir().unwrap();
        let client = WikiClient::new(dir.path(), true);
        seed_fixture(
            &client,
            &search_params("Italo Calvino", "1"),
            serde_json::json!({"query": {"search": [{"title": "Italo Calvino"}]}}),
        );
        let titles = client.search("Italo Calvino", 1).unwrap();
        assert_eq!(titles, vec!["Italo Calvino"]);
        assert_eq!(client.network_call_count(), 0);
    }

    #[test]
    fn search_truncates_to_limit() {
        let dir = tempfile::tempdir().unwrap();
        let client = WikiClient::new(dir.path(), true);
        seed_fixture(
            &client,
            &search_params("Turin", "2"),
            serde_json::json!({"query": {"search": [
                {"title": "Turin"}, {"title": "Turin Cathedral"}, {"title": "Juventus"}
            ]}}),
        );
        let titles = client.search("Turin", 2).unwrap();
        assert_eq!(titles, vec!["Turin", "Turin Cathedral"]);
    }

    #[test]
    fn empty_search_is_distinct_signal() {
        let dir = tempfile::tempdir().unwrap();
        let client = WikiClient::new(dir.path(), true);
        seed_fixture(
            &client,
            &search_params("zzqqxxyy", "1"),
            serde_json::json!({"query": {"search": []}}),
        );
        assert!(matches!(
            client.search("zzqqxxyy", 1),
            Err(WikiError::EmptyResult(_))
        ));
    }

    #[test]
    fn fixture_miss_is_an_error_not_a_fetch() {
        let dir = tempfile::tempdir().unwrap();
        let client = WikiClient::new(dir.path(), true);
        assert!(matches!(
            client.search("anything", 1),
            Err(WikiError::FixtureMiss(_))
        ));
        assert_eq!(client.network_call_count(), 0);
    }

    #[test]
    fn missing_page_is_page_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let client = WikiClient::new(dir.path(), true);
        seed_fixture(
            &client,
            &[
                ("action", "query"),
                ("prop", "extracts"),
                ("explaintext", "1"),
                ("redirects", "1"),
                ("titles", "No Such Page"),
                ("format", "json"),
            ],
            serde_json::json!({"query": {"pages": {"-1": {"missing": ""}}}}),
        );
        assert!(matches!(
            client.fetch_article("No Such Page"),
            Err(WikiError::PageNotFound(_))
        ));
    }

    #[test]
    fn article_fixture_parses_body_and_infobox() {
        let dir = tempfile::tempdir().unwrap();
        let client = WikiClient::new(dir.path(), true);
        seed_fixture(
            &client,
            &[
                ("action", "query"),
                ("prop", "extracts"),
                ("explaintext", "1"),
                ("redirects", "1"),
                ("titles", "Italo Calvino"),
                ("format", "json"),
            ],
            serde_json::json!({"query": {"pages": {"1234": {
                "pageid": 1234,
                "title": "Italo Calvino",
                "extract": "Italo Calvino was an Italian writer. He wrote novels."
            }}}}),
        );
        seed_fixture(
            &client,
            &[
                ("action", "parse"),
                ("page", "Italo Calvino"),
                ("prop", "wikitext"),
                ("redirects", "1"),
                ("format", "json"),
            ],
            serde_json::json!({"parse": {"wikitext": {"*":
                "{{Infobox writer\n| name = Italo Calvino\n| occupation = Novelist\n}}\nBody text."
            }}}),
        );
        let article = client.fetch_article("Italo Calvino").unwrap();
        assert!(article.body.starts_with("Italo Calvino was an Italian writer."));
        let infobox = article.infobox.unwrap();
        assert_eq!(infobox.subject, "Italo Calvino");
        assert_eq!(
            infobox.pairs,
            vec![("occupation".to_string(), "Novelist".to_string())]
        );
    }

    #[test]
    fn article_without_wikitext_fixture_has_no_infobox() {
        let dir = tempfile::tempdir().unwrap();
        let client = WikiClient::new(dir.path(), true);
        seed_fixture(
            &client,
            &[
                ("action", "query"),
                ("prop", "extracts"),
                ("explaintext", "1"),
                ("redirects", "1"),
                ("titles", "Plain Page"),
                ("format", "json"),
            ],
            serde_json::json!({"query": {"pages": {"7": {"extract": "Plain body."}}}}),
        );
        let article = client.fetch_article("Plain Page").unwrap();
        assert_eq!(article.body, "Plain body.");
        assert!(article.infobox.is_none());
    }
}
