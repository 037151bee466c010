//! Layered run configuration: CLI flags override environment variables,
//! which override the TOML config file, which overrides built-in defaults.
//! String values in the file support `${VAR}` environment interpolation so
//! secrets stay out of checked-in configs.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use pfme_core::backends::{
    ChatBackend, EmbeddingBackend, HashEmbeddingBackend, HttpBackend, HttpBackendConfig,
    LoggedChat, LoggedEmbedding, MockChatBackend, MockScript, RateLimit, RequestLogger,
};
use pfme_core::evaluation::OaAverage;
use pfme_core::pipeline::{EditMode, SplitterKind};
use pfme_core::retrieval::{LevelKind, RankMethod};

use crate::AppError;

/// Environment variables honored between flags and the config file.
pub const ENV_API_KEY: &str = "PFME_API_KEY";
pub const ENV_ENDPOINT: &str = "PFME_ENDPOINT";
pub const ENV_CACHE_DIR: &str = "PFME_CACHE_DIR";

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileBackend {
    pub kind: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub script: Option<String>,
    pub seed: Option<u64>,
    pub rate_per_second: Option<f64>,
    pub rate_burst: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<usize>,
    pub method: Option<String>,
    pub level: Option<String>,
    pub chunk_size: Option<usize>,
    pub mode: Option<String>,
    pub splitter: Option<String>,
    pub candidate_pool: Option<usize>,
    pub seed: Option<u64>,
    pub cache_dir: Option<String>,
    pub fixtures: Option<bool>,
    pub jobs: Option<usize>,
    pub titles_per_entity: Option<usize>,
    pub evidence_token_budget: Option<usize>,
    pub context_token_budget: Option<usize>,
    pub request_log: Option<String>,
    pub oa_average: Option<String>,
    pub wiki_api_url: Option<String>,
    #[serde(default)]
    pub chat: FileBackend,
    #[serde(default)]
    pub embedding: FileBackend,
}

/// Replaces `${VAR}` with the variable's value; unset variables become the
/// empty string.
fn interpolate_env(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(pos) = rest.find("${") {
        out.push_str(&rest[..pos]);
        match rest[pos + 2..].find('}') {
            Some(end) => {
                let var = &rest[pos + 2..pos + 2 + end];
                out.push_str(&std::env::var(var).unwrap_or_default());
                rest = &rest[pos + 2 + end + 1..];
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

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("reading {}: {e}", path.display())))?;
        let interpolated = interpolate_env(&raw);
        toml::from_str(&interpolated)
            .map_err(|e| AppError::Config(format!("parsing {}: {e}", path.display())))
    }
}

/// Flag-level overrides collected by the CLI layer. `None` means the flag
/// was not given.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub k: Option<usize>,
    pub method: Option<String>,
    pub level: Option<String>,
    pub chunk_size: Option<usize>,
    pub mode: Option<String>,
    pub splitter: Option<String>,
    pub candidate_pool: Option<usize>,
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub fixtures: bool,
    pub jobs: Option<usize>,
    pub emit_traces: bool,
    pub oa_average: Option<String>,
}

/// Backend selection resolved from config.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    OpenAi {
        endpoint: String,
        model: String,
        api_key: Option<String>,
        rate: Option<RateLimit>,
    },
    Mock {
        script: Option<PathBuf>,
        seed: u64,
    },
}

/// The fully resolved run configuration. Defaults follow the best reported
/// setting: five evidence chunks, ret ranking, document-level retrieval,
/// 600-token chunks.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub chat: BackendChoice,
    pub embedding: BackendChoice,
    pub k: usize,
    pub method: RankMethod,
    pub level: LevelKind,
    pub chunk_size: usize,
    /// Whether chunk_size came from a flag or the file (as opposed to the
    /// level default); sweeps keep per-level defaults unless it did.
    pub chunk_size_explicit: bool,
    pub mode: EditMode,
    pub splitter: SplitterKind,
    pub candidate_pool: usize,
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub fixtures: bool,
    pub jobs: usize,
    pub emit_traces: bool,
    pub titles_per_entity: usize,
    pub evidence_token_budget: usize,
    pub context_token_budget: usize,
    pub request_log: Option<PathBuf>,
    pub oa_average: OaAverage,
    pub wiki_api_url: String,
}

impl RunConfig {
    /// Short editing-model name for editor naming (`PFME@<model>@<k>`).
    pub fn model_name(&self) -> String {
        match &self.chat {
            BackendChoice::OpenAi { model, .. } => model.clone(),
            BackendChoice::Mock { .. } => "mock".to_string(),
        }
    }
}

fn parse_method(name: &str, seed: u64) -> Result<RankMethod, AppError> {
    RankMethod::from_name(name, seed)
        .ok_or_else(|| AppError::Config(format!("unknown ranking method `{name}`")))
}

fn parse_level(name: &str) -> Result<LevelKind, AppError> {
    match name {
        "document" => Ok(LevelKind::Document),
        "sentence" => Ok(LevelKind::Sentence),
        other => Err(AppError::Config(format!("unknown retrieval level `{other}`"))),
    }
}

fn parse_mode(name: &str) -> Result<EditMode, AppError> {
    match name {
        "standard" => Ok(EditMode::Standard),
        "factscore" => Ok(EditMode::Factscore),
        other => Err(AppError::Config(format!("unknown edit mode `{other}`"))),
    }
}

fn parse_splitter(name: &str) -> Result<SplitterKind, AppError> {
    match name {
        "rule" => Ok(SplitterKind::Rule),
        "model" => Ok(SplitterKind::Model),
        other => Err(AppError::Config(format!("unknown splitter `{other}`"))),
    }
}

fn parse_oa(name: &str) -> Result<OaAverage, AppError> {
    match name {
        "weighted" => Ok(OaAverage::Weighted),
        "micro" => Ok(OaAverage::Micro),
        other => Err(AppError::Config(format!("unknown oa average `{other}`"))),
    }
}

fn resolve_backend(
    file: &FileBackend,
    env_endpoint: Option<&str>,
    env_api_key: Option<&str>,
    default_seed: u64,
    config_dir: Option<&Path>,
) -> Result<BackendChoice, AppError> {
    let kind = file.kind.as_deref().unwrap_or("mock");
    match kind {
        "openai" => {
            let endpoint = env_endpoint
                .map(str::to_string)
                .or_else(|| file.endpoint.clone())
                .ok_or_else(|| {
                    AppError::Config(
                        "openai backend requires an endpoint (config or PFME_ENDPOINT)"
                            .to_string(),
                    )
                })?;
            let api_key = env_api_key
                .map(str::to_string)
                .or_else(|| file.api_key.clone().filter(|s| !s.is_empty()));
            if api_key.is_none() {
                return Err(AppError::Config(
                    "openai backend requires an API key (config `api_key` or PFME_API_KEY)"
                        .to_string(),
                ));
            }
            let rate = match (file.rate_per_second, file.rate_burst) {
                (Some(per_second), burst) => Some(RateLimit {
                    per_second,
                    burst: burst.unwrap_or(per_second.max(1.0)),
                }),
                _ => None,
            };
            Ok(BackendChoice::OpenAi {
                endpoint,
                model: file.model.clone().unwrap_or_else(|| "gpt-3.5-turbo".to_string()),
                api_key,
                rate,
            })
        }
        "mock" => {
            let script = file.script.as_ref().map(|s| {
                let p = PathBuf::from(s);
                match (p.is_relative(), config_dir) {
                    (true, Some(dir)) => dir.join(p),
                    _ => p,
                }
            });
            Ok(BackendChoice::Mock {
                script,
                seed: file.seed.unwrap_or(default_seed),
            })
        }
        other => Err(AppError::Config(format!("unknown backend kind `{other}`"))),
    }
}

/// Resolves the final configuration. Precedence, highest first: CLI flags,
/// environment variables, config file, defaults.
pub fn resolve(
    config_path: Option<&Path>,
    flags: &FlagOverrides,
) -> Result<RunConfig, AppError> {
    let file = match config_path {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let config_dir = config_path.and_then(Path::parent);

    let env_api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
    let env_endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty());
    let env_cache = std::env::var(ENV_CACHE_DIR).ok().filter(|s| !s.is_empty());

    let seed = flags.seed.or(file.seed).unwrap_or(0);

    let k = flags.k.or(file.k).unwrap_or(5);
    if k == 0 {
        return Err(AppError::Config("k must be at least 1".to_string()));
    }

    let level = match flags.level.as_deref().or(file.level.as_deref()) {
        Some(name) => parse_level(name)?,
        None => LevelKind::Document,
    };
    let chunk_size_explicit = flags.chunk_size.or(file.chunk_size).is_some();
    let chunk_size = flags
        .chunk_size
        .or(file.chunk_size)
        .unwrap_or(match level {
            LevelKind::Document => 600,
            LevelKind::Sentence => 300,
        });
    if chunk_size == 0 {
        return Err(AppError::Config("chunk size must be positive".to_string()));
    }

    let method = match flags.method.as_deref().or(file.method.as_deref()) {
        Some(name) => parse_method(name, seed)?,
        None => RankMethod::Ret,
    };
    let mode = match flags.mode.as_deref().or(file.mode.as_deref()) {
        Some(name) => parse_mode(name)?,
        None => EditMode::Standard,
    };
    let splitter = match flags.splitter.as_deref().or(file.splitter.as_deref()) {
        Some(name) => parse_splitter(name)?,
        None => SplitterKind::Rule,
    };
    let oa_average = match flags.oa_average.as_deref().or(file.oa_average.as_deref()) {
        Some(name) => parse_oa(name)?,
        None => OaAverage::Weighted,
    };

    let cache_dir = flags
        .cache_dir
        .clone()
        .or(env_cache.map(PathBuf::from))
        .or(file.cache_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cache"));

    let chat = resolve_backend(
        &file.chat,
        env_endpoint.as_deref(),
        env_api_key.as_deref(),
        seed,
        config_dir,
    )?;
    let embedding = resolve_backend(
        &file.embedding,
        env_endpoint.as_deref(),
        env_api_key.as_deref(),
        seed,
        config_dir,
    )?;

    Ok(RunConfig {
        chat,
        embedding,
        k,
        method,
        level,
        chunk_size,
        chunk_size_explicit,
        mode,
        splitter,
        candidate_pool: flags.candidate_pool.or(file.candidate_pool).unwrap_or(10),
        seed,
        cache_dir,
        fixtures: flags.fixtures || file.fixtures.unwrap_or(false),
        jobs: flags.jobs.or(file.jobs).unwrap_or(1).max(1),
        emit_traces: flags.emit_traces,
        titles_per_entity: file.titles_per_entity.unwrap_or(1),
        evidence_token_budget: file.evidence_token_budget.unwrap_or(3000),
        context_token_budget: file.context_token_budget.unwrap_or(1024),
        request_log: file.request_log.as_ref().map(PathBuf::from),
        oa_average,
        wiki_api_url: file
            .wiki_api_url
            .unwrap_or_else(|| pfme_core::retrieval::DEFAULT_API_URL.to_string()),
    })
}

/// Instantiates the chat backend described by the config.
pub fn build_chat(config: &RunConfig) -> Result<std::sync::Arc<dyn ChatBackend>, AppError> {
    let backend: std::sync::Arc<dyn ChatBackend> = match &config.chat {
        BackendChoice::OpenAi {
            endpoint,
            model,
            api_key,
            rate,
        } => std::sync::Arc::new(
            HttpBackend::new(HttpBackendConfig {
                endpoint: endpoint.clone(),
                api_key: api_key.clone(),
                chat_model: model.clone(),
                embedding_model: model.clone(),
                rate: *rate,
                ..HttpBackendConfig::default()
            })
            .map_err(|e| AppError::Backend(e.to_string()))?,
        ),
        BackendChoice::Mock { script, seed: _ } => {
            let script = match script {
                Some(path) => MockScript::from_json_file(path)
                    .map_err(|e| AppError::Config(format!("mock script: {e}")))?,
                None => MockScript::new().with_default("UNVERIFIABLE"),
            };
            std::sync::Arc::new(MockChatBackend::new(script))
        }
    };
    match &config.request_log {
        Some(path) => {
            let logger = RequestLogger::create(path)
                .map_err(|e| AppError::Config(format!("request log: {e}")))?;
            Ok(std::sync::Arc::new(LoggedChat::new(
                backend,
                std::sync::Arc::new(logger),
            )))
        }
        None => Ok(backend),
    }
}

/// Instantiates the embedding backend described by the config.
pub fn build_embedding(
    config: &RunConfig,
) -> Result<std::sync::Arc<dyn EmbeddingBackend>, AppError> {
    let backend: std::sync::Arc<dyn EmbeddingBackend> = match &config.embedding {
        BackendChoice::OpenAi {
            endpoint,
            model,
            api_key,
            rate,
        } => std::sync::Arc::new(
            HttpBackend::new(HttpBackendConfig {
                endpoint: endpoint.clone(),
                api_key: api_key.clone(),
                chat_model: model.clone(),
                embedding_model: model.clone(),
                rate: *rate,
                timeout: Duration::from_secs(60),
                ..HttpBackendConfig::default()
            })
            .map_err(|e| AppError::Backend(e.to_string()))?,
        ),
        BackendChoice::Mock { seed, .. } => {
            std::sync::Arc::new(HashEmbeddingBackend::new(*seed))
        }
    };
    match &config.request_log {
        Some(path) => {
            let logger = RequestLogger::create(path)
                .map_err(|e| AppError::Config(format!("request log: {e}")))?;
            Ok(std::sync::Arc::new(LoggedEmbedding::new(
                backend,
                std::sync::Arc::new(logger),
            )))
        }
        None => Ok(backend),
    }
}
