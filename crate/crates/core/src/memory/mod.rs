//! Task-related symbolic memory.
//!
//! Perception records for one video are folded into a small relational store
//! whose tables depend on the question: a space-dominant part keyed by object
//! instance, a time-dominant part keyed by frame, or both. Tools query it with
//! read-only SQL.
//!
//! Schema:
//!
//! ```text
//! instances(instance_id INTEGER PRIMARY KEY, category TEXT, appearance TEXT, action TEXT,
//!           first_frame INTEGER, last_frame INTEGER)
//! trajectories(instance_id INTEGER, frame_index INTEGER, x1 REAL, y1 REAL, x2 REAL, y2 REAL,
//!              mask_ref TEXT NULL)
//! frames(frame_index INTEGER PRIMARY KEY, timestamp REAL, caption TEXT NULL,
//!        ocr_text TEXT NULL, asr_text TEXT NULL)
//! clips(clip_id INTEGER PRIMARY KEY, start_frame INTEGER, end_frame INTEGER, caption TEXT)
//! ```

mod dedup;
mod record;
mod select;
mod store;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rusqlite::{params, Connection};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub use dedup::{deduplicate_clips, jaccard, Clip};
pub use record::{parse_records, read_records, ExtractionRecord, Payload, RecordKind, Rejection};
pub use select::{parse_selection, select_memory_type, SELECTION_RETRIES};
pub use store::{ResultTable, SqlError, SqlStore, SqlValue};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("cannot read {path}: {source}")]
    Input {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dedup threshold must be in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("memory selection must enable at least one memory type")]
    EmptySelection,
    #[error("memory store: {0}")]
    Store(String),
    #[error(transparent)]
    Sqlite(#[from] rusqlite::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryTypeSelection {
    pub build_space: bool,
    pub build_time: bool,
}

impl MemoryTypeSelection {
    pub const SPACE: Self = Self {
        build_space: true,
        build_time: false,
    };
    pub const TIME: Self = Self {
        build_space: false,
        build_time: true,
    };
    pub const BOTH: Self = Self {
        build_space: true,
        build_time: true,
    };

    pub fn label(&self) -> &'static str {
        match (self.build_space, self.build_time) {
            (true, true) => "both",
            (true, false) => "space-dominant",
            (false, true) => "time-dominant",
            (false, false) => "none",
        }
    }
}

const SPACE_DDL: &str = "
CREATE TABLE instances(
    instance_id INTEGER PRIMARY KEY,
    category TEXT,
    appearance TEXT,
    action TEXT,
    first_frame INTEGER,
    last_frame INTEGER
);
CREATE TABLE trajectories(
    instance_id INTEGER NOT NULL REFERENCES instances(instance_id),
    frame_index INTEGER NOT NULL,
    x1 REAL, y1 REAL, x2 REAL, y2 REAL,
    mask_ref TEXT NULL
);";

const TIME_DDL: &str = "
CREATE TABLE frames(
    frame_index INTEGER PRIMARY KEY,
    timestamp REAL,
    caption TEXT NULL,
    ocr_text TEXT NULL,
    asr_text TEXT NULL
);
CREATE TABLE clips(
    clip_id INTEGER PRIMARY KEY,
    start_frame INTEGER,
    end_frame INTEGER,
    caption TEXT
);";

const META_TABLE: &str = "_memory_meta";

/// Row counts per table, for reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub instances: usize,
    pub trajectories: usize,
    pub frames: usize,
    pub clips: usize,
}

/// Outcome of an ingestion: the memory plus the records that were skipped.
#[derive(Debug)]
pub struct Ingested {
    pub memory: TaskMemory,
    pub rejected: Vec<Rejection>,
}

/// Symbolic memory for one (video, question) session. Immutable once built.
#[derive(Debug)]
pub struct TaskMemory {
    video_id: String,
    selection: MemoryTypeSelection,
    dedup_threshold: f64,
    store: SqlStore,
}

#[derive(Default)]
struct InstanceAcc {
    category: String,
    appearance: Option<String>,
    actions: Vec<String>,
    first_frame: i64,
    last_frame: i64,
    trajectory: Vec<(i64, [f64; 4], Option<String>)>,
}

#[derive(Default)]
struct FrameAcc {
    timestamp: f64,
    caption: Option<String>,
    ocr: Option<String>,
    asr: Option<String>,
}

fn append_text(slot: &mut Option<String>, text: &str) {
    match slot {
        Some(existing) => {
            existing.push(' ');
            existing.push_str(text);
        }
        None => *slot = Some(text.to_string()),
    }
}

impl TaskMemory {
    /// Build a memory from already-parsed records. Records violating
    /// cross-record invariants are skipped and reported.
    pub fn ingest(
        video_id: impl Into<String>,
        records: impl IntoIterator<Item = ExtractionRecord>,
        selection: MemoryTypeSelection,
        dedup_threshold: f64,
    ) -> Result<Ingested, MemoryError> {
        if !(0.0..=1.0).contains(&dedup_threshold) {
            return Err(MemoryError::InvalidThreshold(dedup_threshold));
        }
        if !selection.build_space && !selection.build_time {
            return Err(MemoryError::EmptySelection);
        }
        let mut rejected = Vec::new();
        let mut records: Vec<ExtractionRecord> = records
            .into_iter()
            .filter(|r| match r.validate() {
                Ok(()) => true,
                Err(reason) => {
                    warn!(%reason, "skipping malformed record");
                    rejected.push(Rejection { line: 0, reason });
                    false
                }
            })
            .collect();
        // stable: equal keys keep input order
        records.sort_by(|a, b| {
            (a.kind(), a.instance_id().unwrap_or(-1), a.frame_index).cmp(&(
                b.kind(),
                b.instance_id().unwrap_or(-1),
                b.frame_index,
            ))
        });

        let mut instances: BTreeMap<i64, InstanceAcc> = BTreeMap::new();
        let mut frames: BTreeMap<i64, FrameAcc> = BTreeMap::new();
        let mut last_ts: BTreeMap<(RecordKind, i64), f64> = BTreeMap::new();
        let mut seen_detection: HashSet<(i64, i64)> = HashSet::new();

        for rec in &records {
            let key = (rec.kind(), rec.instance_id().unwrap_or(-1));
            if let Some(prev) = last_ts.get(&key) {
                if rec.timestamp < *prev {
                    let reason = format!(
                        "timestamp {} decreases within {:?} stream at frame {}",
                        rec.timestamp, rec.kind(), rec.frame_index
                    );
                    warn!(%reason, "skipping malformed record");
                    rejected.push(Rejection { line: 0, reason });
                    continue;
                }
            }
            last_ts.insert(key, rec.timestamp);

            match &rec.payload {
                Payload::Detection {
                    instance_id,
                    category,
                    bbox,
                    appearance,
                    mask_ref,
                } => {
                    if !selection.build_space {
                        continue;
                    }
                    if !seen_detection.insert((*instance_id, rec.frame_index)) {
                        let reason = format!(
                            "duplicate detection for instance {instance_id} at frame {}",
                            rec.frame_index
                        );
                        warn!(%reason, "skipping malformed record");
                        rejected.push(Rejection { line: 0, reason });
                        continue;
                    }
                    let acc = instances.entry(*instance_id).or_insert_with(|| InstanceAcc {
                        category: category.clone(),
                        first_frame: rec.frame_index,
                        last_frame: rec.frame_index,
                        ..Default::default()
                    });
                    if acc.appearance.is_none() && !appearance.trim().is_empty() {
                        acc.appearance = Some(appearance.clone());
                    }
                    acc.first_frame = acc.first_frame.min(rec.frame_index);
                    acc.last_frame = acc.last_frame.max(rec.frame_index);
                    acc.trajectory.push((rec.frame_index, *bbox, mask_ref.clone()));
                }
                Payload::Action { instance_id, label } => {
                    if !selection.build_space {
                        continue;
                    }
                    match instances.get_mut(instance_id) {
                        Some(acc) => {
                            if !acc.actions.contains(label) {
                                acc.actions.push(label.clone());
                            }
                        }
                        None => {
                            let reason =
                                format!("action for unknown instance {instance_id}");
                            warn!(%reason, "skipping malformed record");
                            rejected.push(Rejection { line: 0, reason });
                        }
                    }
                }
                Payload::Caption { text } | Payload::Ocr { text } | Payload::Asr { text, .. } => {
                    if !selection.build_time {
                        continue;
                    }
                    let acc = frames.entry(rec.frame_index).or_insert_with(|| FrameAcc {
                        timestamp: rec.timestamp,
                        ..Default::default()
                    });
                    acc.timestamp = acc.timestamp.min(rec.timestamp);
                    let slot = match rec.kind() {
                        RecordKind::Caption => &mut acc.caption,
                        RecordKind::Ocr => &mut acc.ocr,
                        _ => &mut acc.asr,
                    };
                    append_text(slot, text);
                }
            }
        }

        let mut conn = Connection::open_in_memory()?;
        let mut tables = Vec::new();
        if selection.build_space {
            conn.execute_batch(SPACE_DDL)?;
            tables.extend(["instances".to_string(), "trajectories".to_string()]);
        }
        if selection.build_time {
            conn.execute_batch(TIME_DDL)?;
            tables.extend(["frames".to_string(), "clips".to_string()]);
        }
        let video_id = video_id.into();
        conn.execute_batch(&format!(
            "CREATE TABLE {META_TABLE}(key TEXT PRIMARY KEY, value TEXT NOT NULL);"
        ))?;

        let tx = conn.transaction()?;
        {
            let mut meta = tx.prepare(&format!("INSERT INTO {META_TABLE} VALUES (?1, ?2)"))?;
            meta.execute(params!["video_id", video_id])?;
            meta.execute(params!["selection", selection.label()])?;
            meta.execute(params!["dedup_threshold", dedup_threshold.to_string()])?;
        }
        if selection.build_space {
            let mut ins = tx.prepare("INSERT INTO instances VALUES (?1, ?2, ?3, ?4, ?5, ?6)")?;
            let mut traj =
                tx.prepare("INSERT INTO trajectories VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)")?;
            for (id, acc) in &instances {
                let action = (!acc.actions.is_empty()).then(|| acc.actions.join("; "));
                ins.execute(params![
                    id,
                    acc.category,
                    acc.appearance,
                    action,
                    acc.first_frame,
                    acc.last_frame
                ])?;
                for (frame, b, mask) in &acc.trajectory {
                    traj.execute(params![id, frame, b[0], b[1], b[2], b[3], mask])?;
                }
            }
        }
        if selection.build_time {
            let mut fr = tx.prepare("INSERT INTO frames VALUES (?1, ?2, ?3, ?4, ?5)")?;
            for (frame, acc) in &frames {
                fr.execute(params![frame, acc.timestamp, acc.caption, acc.ocr, acc.asr])?;
            }
            let captioned: Vec<(i64, String)> = frames
                .iter()
                .filter_map(|(f, acc)| acc.caption.clone().map(|c| (*f, c)))
                .collect();
            let mut cl = tx.prepare("INSERT INTO clips VALUES (?1, ?2, ?3, ?4)")?;
            for (i, clip) in deduplicate_clips(&captioned, dedup_threshold).iter().enumerate() {
                cl.execute(params![i as i64, clip.start_frame, clip.end_frame, clip.caption])?;
            }
        }
        tx.commit()?;

        Ok(Ingested {
            memory: TaskMemory {
                video_id,
                selection,
                dedup_threshold,
                store: SqlStore::seal(conn, tables)?,
            },
            rejected,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn selection(&self) -> MemoryTypeSelection {
        self.selection
    }

    pub fn dedup_threshold(&self) -> f64 {
        self.dedup_threshold
    }

    pub fn store(&self) -> &SqlStore {
        &self.store
    }

    pub fn execute_sql(&self, query: &str) -> Result<ResultTable, SqlError> {
        self.store.execute(query)
    }

    pub fn schema_description(&self) -> String {
        self.store.describe()
    }

    pub fn content_digest(&self) -> String {
        self.store.content_digest()
    }

    pub fn row_counts(&self) -> RowCounts {
        let count = |t: &str| {
            if self.store.tables().iter().any(|x| x == t) {
                self.store.row_count(t)
            } else {
                0
            }
        };
        RowCounts {
            instances: count("instances"),
            trajectories: count("trajectories"),
            frames: count("frames"),
            clips: count("clips"),
        }
    }

    /// Write the memory as a single SQLite file.
    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        self.store.save_to(path)
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        if !path.exists() {
            return Err(MemoryError::Input {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            });
        }
        let store = SqlStore::load_file(path, Some(Vec::new()))?;
        let meta = store
            .execute(&format!("SELECT key, value FROM {META_TABLE}"))
            .map_err(|e| MemoryError::Store(format!("missing metadata: {e}")))?;
        let mut video_id = None;
        let mut selection = None;
        let mut threshold = None;
        for row in meta.rows {
            if let [SqlValue::Text(k), SqlValue::Text(v)] = row.as_slice() {
                match k.as_str() {
                    "video_id" => video_id = Some(v.clone()),
                    "selection" => selection = parse_selection_label(v),
                    "dedup_threshold" => threshold = v.parse::<f64>().ok(),
                    _ => {}
                }
            }
        }
        let (Some(video_id), Some(selection), Some(dedup_threshold)) = (video_id, selection, threshold)
        else {
            return Err(MemoryError::Store("incomplete metadata".into()));
        };
        let mut tables = Vec::new();
        if selection.build_space {
            tables.extend(["instances".to_string(), "trajectories".to_string()]);
        }
        if selection.build_time {
            tables.extend(["frames".to_string(), "clips".to_string()]);
        }
        let store = SqlStore::load_file(path, Some(tables))?;
        Ok(Self {
            video_id,
            selection,
            dedup_threshold,
            store,
        })
    }
}

fn parse_selection_label(s: &str) -> Option<MemoryTypeSelection> {
    match s {
        "both" => Some(MemoryTypeSelection::BOTH),
        "space-dominant" => Some(MemoryTypeSelection::SPACE),
        "time-dominant" => Some(MemoryTypeSelection::TIME),
        _ => None,
    }
}
