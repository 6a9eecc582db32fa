//! Prediction files: JSON lines of `{id, prediction, gold}`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::dataset::{tokenize, QGExample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
    pub gold: String,
    /// Length-normalized log-probability of the decoded hypothesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Prediction {
    pub fn prediction_tokens(&self) -> Vec<String> {
        tokenize(&self.prediction)
    }

    pub fn gold_tokens(&self) -> Vec<String> {
        tokenize(&self.gold)
    }
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(p.id.clone()) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate id {}", p.id),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    parse_predictions(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path)
}

/// Serializes one value per line and writes the file atomically.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Replaces each prediction's `gold` with the corpus question of the same
/// id. Both sides must cover exactly the same ids.
pub fn attach_gold(predictions: &mut [Prediction], gold: &[QGExample]) -> Result<()> {
    let by_id: HashMap<&str, &QGExample> = gold.iter().map(|e| (e.id.as_str(), e)).collect();
    let predicted: HashSet<&str> = predictions.iter().map(|p| p.id.as_str()).collect();
    let mut missing: Vec<String> = gold
        .iter()
        .filter(|e| !predicted.contains(e.id.as_str()))
        .map(|e| e.id.clone())
        .collect();
    let mut unexpected: Vec<String> = predictions
        .iter()
        .filter(|p| !by_id.contains_key(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        missing.sort();
        unexpected.sort();
        return Err(Error::IdMismatch { missing, unexpected });
    }
    for p in predictions {
        p.gold = by_id[p.id.as_str()].question.join(" ");
    }
    Ok(())
}
