//! Perception records as they arrive from the extraction pipeline (JSON Lines).

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MemoryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Detection,
    Caption,
    Asr,
    Ocr,
    Action,
}

/// Kind-specific fields. Serialized flat next to the common fields, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Detection {
        instance_id: i64,
        category: String,
        #[serde(rename = "box")]
        bbox: [f64; 4],
        #[serde(default)]
        appearance: String,
        #[serde(default)]
        mask_ref: Option<String>,
    },
    Caption {
        text: String,
    },
    Asr {
        text: String,
        end_timestamp: f64,
    },
    Ocr {
        text: String,
    },
    Action {
        instance_id: i64,
        label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub frame_index: i64,
    pub timestamp: f64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl ExtractionRecord {
    pub fn kind(&self) -> RecordKind {
        match self.payload {
            Payload::Detection { .. } => RecordKind::Detection,
            Payload::Caption { .. } => RecordKind::Caption,
            Payload::Asr { .. } => RecordKind::Asr,
            Payload::Ocr { .. } => RecordKind::Ocr,
            Payload::Action { .. } => RecordKind::Action,
        }
    }

    pub fn instance_id(&self) -> Option<i64> {
        match self.payload {
            Payload::Detection { instance_id, .. } | Payload::Action { instance_id, .. } => {
                Some(instance_id)
            }
            _ => None,
        }
    }

    /// Per-record invariants. Cross-record checks (timestamp order, duplicates)
    /// happen during ingestion.
    pub fn validate(&self) -> Result<(), String> {
        if self.frame_index < 0 {
            return Err(format!("negative frame_index {}", self.frame_index));
        }
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(format!("invalid timestamp {}", self.timestamp));
        }
        match &self.payload {
            Payload::Detection {
                instance_id,
                category,
                bbox,
                ..
            } => {
                if *instance_id < 0 {
                    return Err(format!("negative instance_id {instance_id}"));
                }
                if category.trim().is_empty() {
                    return Err("empty category".into());
                }
                let [x1, y1, x2, y2] = *bbox;
                if !bbox.iter().all(|v| v.is_finite()) || !(x1 < x2 && y1 < y2) {
                    return Err(format!("degenerate box {bbox:?}"));
                }
            }
            Payload::Action { instance_id, label } => {
                if *instance_id < 0 {
                    return Err(format!("negative instance_id {instance_id}"));
                }
                if label.trim().is_empty() {
                    return Err("empty action label".into());
                }
            }
            Payload::Asr { end_timestamp, .. } => {
                if end_timestamp.is_nan() || *end_timestamp < self.timestamp {
                    return Err(format!(
                        "asr end_timestamp {end_timestamp} precedes timestamp {}",
                        self.timestamp
                    ));
                }
            }
            Payload::Caption { .. } | Payload::Ocr { .. } => {}
        }
        Ok(())
    }
}

/// A line that could not be turned into a valid record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number, or 0 when the record did not come from a file.
    pub line: usize,
    pub reason: String,
}

/// Parse a JSON Lines stream. Malformed lines are collected, not fatal.
pub fn parse_records<R: BufRead>(reader: R) -> Result<(Vec<ExtractionRecord>, Vec<Rejection>), MemoryError> {
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExtractionRecord>(&line) {
            Ok(rec) => match rec.validate() {
                Ok(()) => records.push(rec),
                Err(reason) => rejected.push(Rejection {
                    line: idx + 1,
                    reason,
                }),
            },
            Err(e) => rejected.push(Rejection {
                line: idx + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok((records, rejected))
}

pub fn read_records(path: &Path) -> Result<(Vec<ExtractionRecord>, Vec<Rejection>), MemoryError> {
    let file = std::fs::File::open(path).map_err(|e| MemoryError::Input {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_records(std::io::BufReader::new(file))
}
