//! Adapters from benchmark file formats to [`QAInstance`] records.
//!
//! The official development set becomes the test split; the official
//! training set is re-split into train and dev under a fixed seed.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::forge::{validate_dataset, QAInstance, Split};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// JSON array of `{qid, question, answer: bool, facts: [..]}`.
    StrategyQa,
    /// JSON lines of `{ex_id, sentence, explanation, label: "true"|"false"}`.
    Creak,
    /// JSON lines of `{id, question: {stem, choices: [{label, text}]}, answerKey}`.
    Csqa,
    /// CSQA layout plus `fact1`/`fact2`, joined into the human rationale.
    Qasc,
    /// JSON lines of [`QAInstance`] fields.
    Generic,
}

impl Format {
    pub const ALL: [Format; 5] = [
        Format::StrategyQa,
        Format::Creak,
        Format::Csqa,
        Format::Qasc,
        Format::Generic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Format::StrategyQa => "strategyqa",
            Format::Creak => "creak",
            Format::Csqa => "csqa",
            Format::Qasc => "qasc",
            Format::Generic => "generic",
        }
    }

    pub fn parse(name: &str) -> Result<Format> {
        let lower = name.to_ascii_lowercase();
        Format::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| {
                let names: Vec<_> = Format::ALL.iter().map(|f| f.name()).collect();
                Error::Config(format!(
                    "unknown dataset format {name:?}; supported: {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub format: Format,
    /// Official training file; split into train and dev.
    pub train_path: PathBuf,
    /// Official development file; becomes the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_path: Option<PathBuf>,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dev_fraction() -> f64 {
    0.1
}

fn row_error(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: row,
        message: message.into(),
    }
}

fn str_field<'a>(v: &'a Value, key: &str, path: &Path, row: usize) -> Result<&'a str> {
    v.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| row_error(path, row, format!("missing string field {key:?}")))
}

fn yes_no() -> Vec<String> {
    vec!["yes".into(), "no".into()]
}

fn from_row(format: Format, v: &Value, path: &Path, row: usize) -> Result<QAInstance> {
    let q = match format {
        Format::StrategyQa => {
            let answer = v
                .get("answer")
                .and_then(Value::as_bool)
                .ok_or_else(|| row_error(path, row, "missing boolean field \"answer\""))?;
            let facts: Vec<&str> = v
                .get("facts")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default();
            QAInstance {
                id: str_field(v, "qid", path, row)?.to_string(),
                question: str_field(v, "question", path, row)?.to_string(),
                options: yes_no(),
                gold_answer: if answer { "yes" } else { "no" }.to_string(),
                human_rationale: (!facts.is_empty()).then(|| facts.join(" ")),
                split: Split::Train,
            }
        }
        Format::Creak => {
            let label = str_field(v, "label", path, row)?;
            let answer = match label.to_ascii_lowercase().as_str() {
                "true" => "true",
                "false" => "false",
                other => return Err(row_error(path, row, format!("label {other:?} is not true/false"))),
            };
            QAInstance {
                id: str_field(v, "ex_id", path, row)?.to_string(),
                question: str_field(v, "sentence", path, row)?.to_string(),
                options: vec!["true".into(), "false".into()],
                gold_answer: answer.to_string(),
                human_rationale: v.get("explanation").and_then(Value::as_str).map(str::to_string),
                split: Split::Train,
            }
        }
        Format::Csqa | Format::Qasc => {
            let question = v
                .get("question")
                .ok_or_else(|| row_error(path, row, "missing field \"question\""))?;
            let choices = question
                .get("choices")
                .and_then(Value::as_array)
                .ok_or_else(|| row_error(path, row, "missing \"question.choices\""))?;
            let key = str_field(v, "answerKey", path, row)?;
            let mut options = Vec::with_capacity(choices.len());
            let mut gold = None;
            for c in choices {
                let text = str_field(c, "text", path, row)?;
                if c.get("label").and_then(Value::as_str) == Some(key) {
                    gold = Some(text.to_string());
                }
                options.push(text.to_string());
            }
            let gold = gold.ok_or_else(|| row_error(path, row, format!("answerKey {key:?} matches no choice")))?;
            let rationale = if format == Format::Qasc {
                let facts: Vec<&str> = ["fact1", "fact2"]
                    .iter()
                    .filter_map(|k| v.get(*k).and_then(Value::as_str))
                    .collect();
                (!facts.is_empty()).then(|| facts.join(" "))
            } else {
                None
            };
            QAInstance {
                id: str_field(v, "id", path, row)?.to_string(),
                question: str_field(question, "stem", path, row)?.to_string(),
                options,
                gold_answer: gold,
                human_rationale: rationale,
                split: Split::Train,
            }
        }
        Format::Generic => {
            if v.get("answer").is_none() {
                return Err(row_error(path, row, "missing field \"answer\""));
            }
            serde_json::from_value(v.clone()).map_err(|e| row_error(path, row, e.to_string()))?
        }
    };
    q.validate().map_err(|e| row_error(path, row, e.to_string()))?;
    Ok(q)
}

/// Parses one file. Row numbers in errors are 1-based lines for JSON lines
/// files and 1-based array positions for JSON arrays.
pub fn read_file(format: Format, path: &Path) -> Result<Vec<QAInstance>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<(usize, Value)> = if format == Format::StrategyQa {
        let v: Value = serde_json::from_str(&text).map_err(|e| row_error(path, e.line(), e.to_string()))?;
        let arr = v
            .as_array()
            .ok_or_else(|| row_error(path, 1, "expected a JSON array"))?;
        arr.iter().cloned().enumerate().map(|(i, v)| (i + 1, v)).collect()
    } else {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v = serde_json::from_str(line).map_err(|e| row_error(path, i + 1, e.to_string()))?;
            rows.push((i + 1, v));
        }
        rows
    };
    rows.iter().map(|(row, v)| from_row(format, v, path, *row)).collect()
}

/// Reads both official files and assigns splits. Output order: train, dev,
/// test, each in file order.
pub fn ingest(cfg: &IngestConfig) -> Result<Vec<QAInstance>> {
    if !(0.0..1.0).contains(&cfg.dev_fraction) {
        return Err(Error::Config("dev_fraction must lie in [0, 1)".into()));
    }
    let mut train = read_file(cfg.format, &cfg.train_path)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng_for(cfg.seed, "ingest-dev-split"));
    let n_dev = (train.len() as f64 * cfg.dev_fraction).round() as usize;
    let mut is_dev = vec![false; train.len()];
    for &i in &order[..n_dev] {
        is_dev[i] = true;
    }
    for (q, dev) in train.iter_mut().zip(&is_dev) {
        q.split = if *dev { Split::Dev } else { Split::Train };
    }
    let mut out: Vec<QAInstance> = train.iter().filter(|q| q.split == Split::Train).cloned().collect();
    out.extend(train.into_iter().filter(|q| q.split == Split::Dev));
    if let Some(dev) = &cfg.dev_path {
        out.extend(read_file(cfg.format, dev)?.into_iter().map(|mut q| {
            q.split = Split::Test;
            q
        }));
    }
    validate_dataset(&out)?;
    Ok(out)
}
