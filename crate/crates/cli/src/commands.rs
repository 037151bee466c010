//! The five subcommands: detect, edit, evaluate, retrieve-cache, sweep.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::json;

use pfme_core::annotation::{parse_annotated, AnnotatedDocument};
use pfme_core::backends::{ChatBackend, EmbeddingBackend};
use pfme_core::evaluation::{
    align_and_pair, compute_report, load_dataset_jsonl, render_report, run_sweep, sweep_csv,
    DatasetExample, LabeledPair, MetricsReport, ReportFormat, SweepError, SweepSetting,
};
use pfme_core::pipeline::{DocumentRun, EvidenceSource, Pipeline};
use pfme_core::retrieval::{
    assemble_corpus, build_evidence, EvidenceChunk, LevelKind, ManifestEntry, RankMethod, Ranker,
    RetrievalError, WikiClient,
};

use crate::config::RunConfig;
use crate::io::{load_documents, write_lines, InputDocument};
use crate::AppError;

/// Evidence drawn from a prepared corpus by the configured ranker.
struct CorpusEvidence<'a> {
    ranker: &'a Ranker,
    corpus: &'a [EvidenceChunk],
    level: LevelKind,
    method: RankMethod,
    k: usize,
}

impl EvidenceSource for CorpusEvidence<'_> {
    fn evidence_for(
        &self,
        sentences: &[String],
    ) -> Result<Vec<Vec<EvidenceChunk>>, RetrievalError> {
        build_evidence(
            sentences,
            self.corpus,
            self.ranker,
            self.level,
            &self.method,
            self.k,
        )
    }
}

struct Runner {
    config: RunConfig,
    chat: Arc<dyn ChatBackend>,
    embedding: Arc<dyn EmbeddingBackend>,
    wiki: WikiClient,
}

impl Runner {
    fn new(config: RunConfig) -> Result<Self, AppError> {
        let chat = crate::config::build_chat(&config)?;
        let embedding = crate::config::build_embedding(&config)?;
        let wiki = WikiClient::with_api_url(
            config.wiki_api_url.clone(),
            config.cache_dir.clone(),
            config.fixtures,
        );
        Ok(Self {
            config,
            chat,
            embedding,
            wiki,
        })
    }

    fn ranker(&self) -> Ranker {
        Ranker::new(self.embedding.clone())
            .with_chat(self.chat.clone())
            .with_candidate_pool(self.config.candidate_pool)
    }

    fn pipeline(&self) -> Pipeline {
        Pipeline::new(self.chat.clone())
            .with_splitter(self.config.splitter)
            .with_edit_mode(self.config.mode)
            .with_context_budget(self.config.context_token_budget)
            .with_evidence_budget(self.config.evidence_token_budget)
    }

    fn process_one(&self, passage: &str) -> Result<DocumentRun, AppError> {
        let corpus = assemble_corpus(
            passage,
            &self.chat,
            &self.wiki,
            self.config.titles_per_entity,
            self.config.chunk_size,
            self.config.jobs,
        )
        .map_err(|e| match e {
            RetrievalError::Backend(_) | RetrievalError::Rank(_) => {
                AppError::Backend(e.to_string())
            }
            other => AppError::Data(other.to_string()),
        })?;
        let ranker = self.ranker();
        let source = CorpusEvidence {
            ranker: &ranker,
            corpus: &corpus.chunks,
            level: self.config.level,
            method: self.config.method.clone(),
            k: self.config.k,
        };
        self.pipeline()
            .process_document(passage, &source)
            .map_err(AppError::from)
    }

    /// Processes documents with up to `jobs` in flight; results keep input
    /// order.
    fn process_documents(
        &self,
        documents: &[InputDocument],
    ) -> Result<Vec<DocumentRun>, AppError> {
        let jobs = self.config.jobs.max(1);
        if jobs == 1 || documents.len() <= 1 {
            return documents
                .iter()
                .map(|d| self.process_one(&d.passage))
                .collect();
        }
        let queue: Mutex<std::collections::VecDeque<usize>> =
            Mutex::new((0..documents.len()).collect());
        let results: Mutex<Vec<Option<Result<DocumentRun, AppError>>>> =
            Mutex::new((0..documents.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(documents.len()) {
                scope.spawn(|| loop {
                    let i = match queue.lock().expect("queue").pop_front() {
                        Some(i) => i,
                        None => return,
                    };
                    let run = self.process_one(&documents[i].passage);
                    results.lock().expect("results")[i] = Some(run);
                });
            }
        });
        results
            .into_inner()
            .expect("results")
            .into_iter()
            .map(|r| r.expect("every document visited"))
            .collect()
    }
}

fn trace_json(run: &DocumentRun) -> serde_json::Value {
    json!(run
        .traces
        .iter()
        .map(|t| {
            json!({
                "sentence_index": t.sentence_index,
                "final_label": t.final_label.name(),
                "steps": t.steps,
            })
        })
        .collect::<Vec<_>>())
}

/// `detect`: annotated JSONL per document, with labels and optional traces.
pub fn cmd_detect(config: RunConfig, input: &Path, output: &Path) -> Result<(), AppError> {
    let documents = load_documents(input)?;
    let runner = Runner::new(config)?;
    let runs = runner.process_documents(&documents)?;
    let mut lines = Vec::with_capacity(runs.len());
    for (doc, run) in documents.iter().zip(&runs) {
        let mut record = json!({
            "id": doc.id,
            "annotated": run.annotated.serialize(),
            "edited": run.edited,
            "labels": run
                .annotated
                .sentences()
                .iter()
                .map(|s| s.label.name())
                .collect::<Vec<_>>(),
        });
        if runner.config.emit_traces {
            record["traces"] = trace_json(run);
        }
        if !run.warnings.is_empty() {
            record["warnings"] = json!(run.warnings);
        }
        lines.push(record.to_string());
    }
    write_lines(output, &lines)?;
    log::info!("detect: {} document(s) processed", runs.len());
    Ok(())
}

/// `edit`: edited plain-text JSONL (standard or factscore mode).
pub fn cmd_edit(config: RunConfig, input: &Path, output: &Path) -> Result<(), AppError> {
    let documents = load_documents(input)?;
    let mode = config.mode;
    let runner = Runner::new(config)?;
    let runs = runner.process_documents(&documents)?;
    let mut lines = Vec::with_capacity(runs.len());
    for (doc, run) in documents.iter().zip(&runs) {
        lines.push(
            json!({
                "id": doc.id,
                "edited": run.edited,
                "mode": mode.name(),
            })
            .to_string(),
        );
    }
    write_lines(output, &lines)?;
    Ok(())
}

fn load_annotated_map(
    path: &Path,
    fields: &[&str],
) -> Result<Vec<(String, AnnotatedDocument)>, AppError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| AppError::Data(format!("reading {}: {e}", path.display())))?;
    let mut documents = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| AppError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let id = value["id"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| format!("line{}", i + 1));
        let annotated = fields
            .iter()
            .find_map(|f| value[*f].as_str())
            .ok_or_else(|| {
                AppError::Data(format!(
                    "{}:{}: missing any of {:?}",
                    path.display(),
                    i + 1,
                    fields
                ))
            })?;
        let doc = parse_annotated(annotated).map_err(|e| {
            AppError::Data(format!("{}:{} (`{id}`): {e}", path.display(), i + 1))
        })?;
        documents.push((id, doc));
    }
    Ok(documents)
}

/// `evaluate`: gold vs predicted annotations, rendered as the standard report on
/// stdout, optional CSV/JSON copies.
pub fn cmd_evaluate(
    config: RunConfig,
    gold_path: &Path,
    pred_path: &Path,
    label: Option<&str>,
    csv_out: Option<&Path>,
    json_out: Option<&Path>,
) -> Result<MetricsReport, AppError> {
    let gold_docs = load_annotated_map(gold_path, &["gold_annotated", "annotated"])?;
    let pred_docs: HashMap<String, AnnotatedDocument> =
        load_annotated_map(pred_path, &["annotated", "gold_annotated"])?
            .into_iter()
            .collect();

    let mut pairs: Vec<LabeledPair> = Vec::new();
    for (id, gold) in &gold_docs {
        let pred = pred_docs
            .get(id)
            .ok_or_else(|| AppError::Data(format!("prediction missing for id `{id}`")))?;
        let mut doc_pairs = align_and_pair(gold, pred)
            .map_err(|e| AppError::Data(format!("aligning `{id}`: {e}")))?;
        pairs.append(&mut doc_pairs);
    }
    let report = compute_report(&pairs, config.oa_average)
        .map_err(|e| AppError::Data(e.to_string()))?;

    let editor = label
        .map(str::to_string)
        .unwrap_or_else(|| format!("PFME@{}@{}", config.model_name(), config.k));
    print!("{}", render_report(&report, ReportFormat::Table, &editor));
    if let Some(path) = csv_out {
        write_lines(
            path,
            &[render_report(&report, ReportFormat::Csv, &editor).trim_end().to_string()],
        )?;
    }
    if let Some(path) = json_out {
        write_lines(
            path,
            &[render_report(&report, ReportFormat::Json, &editor).trim_end().to_string()],
        )?;
    }
    Ok(report)
}

/// `retrieve-cache`: warm the on-disk wiki cache for the input documents
/// and write a manifest of fetched titles.
pub fn cmd_retrieve_cache(config: RunConfig, input: &Path) -> Result<(), AppError> {
    let documents = load_documents(input)?;
    let runner = Runner::new(config)?;
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for doc in &documents {
        let corpus = assemble_corpus(
            &doc.passage,
            &runner.chat,
            &runner.wiki,
            runner.config.titles_per_entity,
            runner.config.chunk_size,
            runner.config.jobs,
        )
        .map_err(|e| AppError::Backend(e.to_string()))?;
        for entry in corpus.manifest {
            if !entries
                .iter()
                .any(|e| e.entity == entry.entity && e.title == entry.title)
            {
                entries.push(entry);
            }
        }
    }
    let manifest = json!({
        "entries": entries,
        "network_calls": runner.wiki.network_call_count(),
    });
    let path = runner.config.cache_dir.join("manifest.json");
    std::fs::create_dir_all(&runner.config.cache_dir)
        .map_err(|e| AppError::Data(e.to_string()))?;
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| AppError::Data(format!("writing {}: {e}", path.display())))?;
    println!(
        "cached {} title(s); {} network call(s); manifest at {}",
        entries.len(),
        runner.wiki.network_call_count(),
        path.display()
    );
    Ok(())
}

/// Parses `1-10` or `1,2,5` style grid specs.
pub fn parse_grid_values(spec: &str) -> Result<Vec<usize>, AppError> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once('-') {
        let start: usize = a
            .trim()
            .parse()
            .map_err(|_| AppError::Config(format!("bad range `{spec}`")))?;
        let end: usize = b
            .trim()
            .parse()
            .map_err(|_| AppError::Config(format!("bad range `{spec}`")))?;
        if start == 0 || end < start {
            return Err(AppError::Config(format!("bad range `{spec}`")));
        }
        return Ok((start..=end).collect());
    }
    spec.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| AppError::Config(format!("bad value `{part}` in `{spec}`")))
        })
        .collect()
}

/// `sweep`: run the detect pipeline over a grid of evidence counts, ranking
/// methods, and retrieval levels; emit one CSV row per setting.
pub fn cmd_sweep(
    config: RunConfig,
    dataset_path: &Path,
    ks: &str,
    methods: &str,
    levels: &str,
    output: &Path,
) -> Result<(), AppError> {
    let file = std::fs::File::open(dataset_path)
        .map_err(|e| AppError::Data(format!("opening {}: {e}", dataset_path.display())))?;
    let examples = load_dataset_jsonl(std::io::BufReader::new(file))
        .map_err(|e| AppError::Data(e.to_string()))?;
    if examples.is_empty() {
        return Err(AppError::Data("dataset is empty".to_string()));
    }

    let ks = parse_grid_values(ks)?;
    let methods: Vec<RankMethod> = methods
        .split(',')
        .map(|m| {
            RankMethod::from_name(m.trim(), config.seed)
                .ok_or_else(|| AppError::Config(format!("unknown ranking method `{m}`")))
        })
        .collect::<Result<_, _>>()?;
    let levels: Vec<LevelKind> = levels
        .split(',')
        .map(|l| match l.trim() {
            "document" => Ok(LevelKind::Document),
            "sentence" => Ok(LevelKind::Sentence),
            other => Err(AppError::Config(format!("unknown level `{other}`"))),
        })
        .collect::<Result<_, _>>()?;

    let mut grid = Vec::new();
    for level in &levels {
        for method in &methods {
            for &k in &ks {
                grid.push(SweepSetting {
                    k,
                    method: method.clone(),
                    level: *level,
                });
            }
        }
    }

    let runner = Runner::new(config)?;
    let model_name = runner.config.model_name();
    // Corpus per (example, chunk size), shared across grid points.
    type CorpusCache = HashMap<(String, usize), Arc<Vec<EvidenceChunk>>>;
    let corpus_cache: Mutex<CorpusCache> = Mutex::new(HashMap::new());

    let corpus_for = |example: &DatasetExample,
                      chunk_size: usize|
     -> Result<Arc<Vec<EvidenceChunk>>, AppError> {
        let key = (example.id.clone(), chunk_size);
        if let Some(corpus) = corpus_cache.lock().expect("corpus cache").get(&key) {
            return Ok(corpus.clone());
        }
        let corpus = assemble_corpus(
            &example.passage(),
            &runner.chat,
            &runner.wiki,
            runner.config.titles_per_entity,
            chunk_size,
            1,
        )
        .map_err(|e| AppError::Backend(e.to_string()))?;
        let chunks = Arc::new(corpus.chunks);
        corpus_cache
            .lock()
            .expect("corpus cache")
            .insert(key, chunks.clone());
        Ok(chunks)
    };

    let flag_chunk_size = runner.config.chunk_size;
    let explicit_chunk = runner.config.chunk_size_explicit;
    let rows = run_sweep(
        &examples,
        &grid,
        &model_name,
        runner.config.jobs,
        |setting, example| {
            let chunk_size = if explicit_chunk {
                flag_chunk_size
            } else {
                match setting.level {
                    LevelKind::Document => 600,
                    LevelKind::Sentence => 300,
                }
            };
            let corpus = corpus_for(example, chunk_size).map_err(|e| {
                pfme_core::pipeline::PipelineError::Document(e.to_string())
            })?;
            let ranker = runner.ranker();
            let source = CorpusEvidence {
                ranker: &ranker,
                corpus: &corpus,
                level: setting.level,
                method: setting.method.clone(),
                k: setting.k,
            };
            runner
                .pipeline()
                .process_document(&example.passage(), &source)
                .map(|run| run.annotated)
        },
    )
    .map_err(|e| match e {
        SweepError::Detect { .. } => AppError::Backend(e.to_string()),
        other => AppError::Data(other.to_string()),
    })?;

    let csv = sweep_csv(&rows);
    write_lines(output, &[csv.trim_end().to_string()])?;
    Ok(())
}
