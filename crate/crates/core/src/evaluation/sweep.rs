//! Ablation sweeps over evidence count, ranking method, and retrieval
//! level, emitting one CSV row per grid point.

use std::io::BufRead;
use std::sync::Mutex;

use thiserror::Error;

use super::report::COLUMNS;
use super::{align_and_pair, compute_report, EvalError, LabeledPair, MetricsReport, OaAverage};
use crate::annotation::{parse_annotated, AnnotatedDocument, ParseError, StripPolicy};
use crate::pipeline::PipelineError;
use crate::retrieval::{LevelKind, RankMethod};

/// One grid point of the ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSetting {
    pub k: usize,
    pub method: RankMethod,
    pub level: LevelKind,
}

impl SweepSetting {
    /// Editor name following the `Editing Method @ Editing Model @ Evidence
    /// Count` convention, extended with the ranking method and retrieval
    /// level.
    pub fn editor_name(&self, model: &str) -> String {
        format!(
            "PFME@{model}@{}@{}@{}",
            self.k,
            self.method.name(),
            self.level.name()
        )
    }
}

/// A dataset example: the gold annotation, with the raw passage recoverable
/// from it.
#[derive(Debug, Clone)]
pub struct DatasetExample {
    pub id: String,
    pub gold: AnnotatedDocument,
}

impl DatasetExample {
    pub fn passage(&self) -> String {
        self.gold.strip_annotations(StripPolicy::KeepOriginal)
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("evaluating `{id}` under `{setting}`: {source}")]
    Eval {
        id: String,
        setting: String,
        source: EvalError,
    },
    #[error("detection failed for `{id}` under `{setting}`: {source}")]
    Detect {
        id: String,
        setting: String,
        source: PipelineError,
    },
    #[error("gold annotation for `{id}` does not parse: {source}")]
    Gold { id: String, source: ParseError },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Converts an external benchmark format into [`DatasetExample`]s. The
/// bundled [`JsonlImporter`] reads the native JSONL shape; adapters for
/// other gold-file releases implement this and plug into the same harness.
pub trait DatasetImporter {
    fn import(&self, reader: &mut dyn BufRead) -> Result<Vec<DatasetExample>, SweepError>;
}

/// The native dataset format: JSONL of `{"id", "gold_annotated"}`.
pub struct JsonlImporter;

impl DatasetImporter for JsonlImporter {
    fn import(&self, reader: &mut dyn BufRead) -> Result<Vec<DatasetExample>, SweepError> {
        load_dataset_jsonl(reader)
    }
}

/// Loads a JSONL dataset of `{"id", "gold_annotated"}` records.
pub fn load_dataset_jsonl(reader: impl BufRead) -> Result<Vec<DatasetExample>, SweepError> {
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| SweepError::Dataset {
                line: i + 1,
                message: e.to_string(),
            })?;
        let id = value["id"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| format!("line{}", i + 1));
        let annotated = value["gold_annotated"]
            .as_str()
            .ok_or_else(|| SweepError::Dataset {
                line: i + 1,
                message: "missing `gold_annotated`".to_string(),
            })?;
        let gold = parse_annotated(annotated).map_err(|e| SweepError::Gold {
            id: id.clone(),
            source: e,
        })?;
        examples.push(DatasetExample { id, gold });
    }
    Ok(examples)
}

/// One completed grid point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub setting: SweepSetting,
    pub name: String,
    pub report: MetricsReport,
}

/// Runs `detect` over the dataset for every grid point and scores the
/// result. Grid points run in parallel up to `jobs` workers; output order
/// follows the grid.
pub fn run_sweep<F>(
    examples: &[DatasetExample],
    grid: &[SweepSetting],
    model_name: &str,
    jobs: usize,
    detect: F,
) -> Result<Vec<SweepRow>, SweepError>
where
    F: Fn(&SweepSetting, &DatasetExample) -> Result<AnnotatedDocument, PipelineError> + Sync,
{
    let jobs = jobs.max(1);
    let work: Mutex<std::collections::VecDeque<usize>> =
        Mutex::new((0..grid.len()).collect());
    let results: Mutex<Vec<Option<Result<SweepRow, SweepError>>>> =
        Mutex::new((0..grid.len()).map(|_| None).collect());

    let run_one = |gi: usize| -> Result<SweepRow, SweepError> {
        let setting = &grid[gi];
        let name = setting.editor_name(model_name);
        let mut pairs: Vec<LabeledPair> = Vec::new();
        for example in examples {
            let pred = detect(setting, example).map_err(|e| SweepError::Detect {
                id: example.id.clone(),
                setting: name.clone(),
                source: e,
            })?;
            let mut doc_pairs =
                align_and_pair(&example.gold, &pred).map_err(|e| SweepError::Eval {
                    id: example.id.clone(),
                    setting: name.clone(),
                    source: e,
                })?;
            pairs.append(&mut doc_pairs);
        }
        let report =
            compute_report(&pairs, OaAverage::Weighted).map_err(|e| SweepError::Eval {
                id: "<all>".to_string(),
                setting: name.clone(),
                source: e,
            })?;
        Ok(SweepRow {
            setting: setting.clone(),
            name,
            report,
        })
    };

    std::thread::scope(|scope| {
        for _ in 0..jobs.min(grid.len().max(1)) {
            scope.spawn(|| loop {
                let gi = match work.lock().expect("work queue").pop_front() {
                    Some(gi) => gi,
                    None => return,
                };
                let row = run_one(gi);
                results.lock().expect("results")[gi] = Some(row);
            });
        }
    });

    results
        .into_inner()
        .expect("results")
        .into_iter()
        .map(|r| r.expect("every grid point visited"))
        .collect()
}

/// CSV with the standard report columns, one row per grid point.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for row in rows {
        let mut cells = vec![row.name.clone()];
        for t in crate::annotation::HallucType::ALL {
            let cell = match row.report.per_type.get(&t) {
                Some(m) if m.support > 0 => format!("{:.1}", m.f1 * 100.0),
                _ => "—".to_string(),
            };
            cells.push(cell);
        }
        cells.push(format!("{:.1}", row.report.oa_f1 * 100.0));
        cells.push(format!("{:.1}", row.report.bi_f1 * 100.0));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
