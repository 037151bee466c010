//! Document and dataset I/O. Inputs are UTF-8 plain text (one document) or
//! JSONL (`{"id", "passage"}` per line); outputs are JSONL.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::AppError;

#[derive(Debug, Clone)]
pub struct InputDocument {
    pub id: String,
    pub passage: String,
}

#[derive(Deserialize)]
struct PassageRecord {
    id: Option<String>,
    passage: String,
}

/// Loads documents from `path`. `.jsonl`/`.json` files are read line by
/// line; anything else is one plain-text document named after the file stem.
pub fn load_documents(path: &Path) -> Result<Vec<InputDocument>, AppError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| AppError::Data(format!("reading {}: {e}", path.display())))?;
    let is_jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("json")
    );
    if !is_jsonl {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("doc")
            .to_string();
        return Ok(vec![InputDocument { id, passage: raw }]);
    }
    let mut documents = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PassageRecord = serde_json::from_str(line).map_err(|e| {
            AppError::Data(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        documents.push(InputDocument {
            id: record.id.unwrap_or_else(|| format!("doc{}", i + 1)),
            passage: record.passage,
        });
    }
    Ok(documents)
}

/// Writes JSONL lines to `path`, or stdout when `path` is `-`.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), AppError> {
    let body = if lines.is_empty() {
        String::new()
    } else {
        format!("{}\n", lines.join("\n"))
    };
    if path.as_os_str() == "-" {
        std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| AppError::Data(e.to_string()))
    } else {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| AppError::Data(format!("creating {}: {e}", parent.display())))?;
            }
        }
        std::fs::write(path, body)
            .map_err(|e| AppError::Data(format!("writing {}: {e}", path.display())))
    }
}
