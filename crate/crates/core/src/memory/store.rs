//! Read-only relational store shared by task memories and symbolic knowledge sources.

use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MemoryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SqlValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl fmt::Display for SqlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlValue::Null => f.write_str("NULL"),
            SqlValue::Integer(i) => write!(f, "{i}"),
            SqlValue::Real(r) => write!(f, "{r}"),
            SqlValue::Text(t) => write!(f, "'{}'", t.replace('\'', "''")),
        }
    }
}

impl From<ValueRef<'_>> for SqlValue {
    fn from(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => SqlValue::Null,
            ValueRef::Integer(i) => SqlValue::Integer(i),
            ValueRef::Real(r) => SqlValue::Real(r),
            ValueRef::Text(t) => SqlValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => SqlValue::Text(format!("<blob {} bytes>", b.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<SqlValue>>,
}

impl ResultTable {
    /// Compact text rendering used as sub-agent context: header line, then one
    /// line per row, truncated after `max_rows`.
    pub fn render(&self, max_rows: usize) -> String {
        let mut out = self.column_names.join(" | ");
        out.push('\n');
        for row in self.rows.iter().take(max_rows) {
            let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
            out.push_str(&cells.join(" | "));
            out.push('\n');
        }
        if self.rows.len() > max_rows {
            out.push_str(&format!("... ({} more rows)\n", self.rows.len() - max_rows));
        }
        if self.rows.is_empty() {
            out.push_str("(no rows)\n");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SqlError {
    #[error("SQL syntax error: {0}")]
    Syntax(String),
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("write statements are not allowed: {0}")]
    WriteAttempted(String),
    #[error("SQL execution error: {0}")]
    Execution(String),
}

const WRITE_KEYWORDS: &[&str] = &[
    "INSERT", "UPDATE", "DELETE", "DROP", "CREATE", "ALTER", "REPLACE", "ATTACH", "DETACH",
    "PRAGMA", "VACUUM", "REINDEX", "ANALYZE", "BEGIN", "COMMIT", "ROLLBACK", "SAVEPOINT",
    "RELEASE", "UPSERT",
];

fn classify_prepare_error(err: &rusqlite::Error) -> SqlError {
    let msg = err.to_string();
    if let Some(rest) = msg.split("no such table: ").nth(1) {
        return SqlError::UnknownTable(rest.trim().to_string());
    }
    SqlError::Syntax(msg)
}

/// A SQLite database that only ever answers SELECT queries after construction.
pub struct SqlStore {
    conn: Mutex<Connection>,
    tables: Vec<String>,
}

impl fmt::Debug for SqlStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SqlStore").field("tables", &self.tables).finish()
    }
}

impl SqlStore {
    /// Seal a populated connection. `tables` fixes the order used in descriptions and digests.
    pub(crate) fn seal(conn: Connection, tables: Vec<String>) -> Result<Self, MemoryError> {
        conn.pragma_update(None, "query_only", true)?;
        Ok(Self {
            conn: Mutex::new(conn),
            tables,
        })
    }

    /// Copy a database file into memory and seal it.
    pub(crate) fn load_file(path: &Path, tables: Option<Vec<String>>) -> Result<Self, MemoryError> {
        let src = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY)
            .map_err(|e| MemoryError::Store(format!("{}: {e}", path.display())))?;
        let mut conn = Connection::open_in_memory()?;
        {
            let backup = rusqlite::backup::Backup::new(&src, &mut conn)?;
            backup.run_to_completion(256, std::time::Duration::ZERO, None)?;
        }
        let tables = match tables {
            Some(t) => t,
            None => {
                let mut stmt = conn.prepare(
                    "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%' AND name NOT LIKE '\\_%' ESCAPE '\\' ORDER BY name",
                )?;
                let names = stmt
                    .query_map([], |r| r.get::<_, String>(0))?
                    .collect::<Result<Vec<_>, _>>()?;
                names
            }
        };
        Self::seal(conn, tables)
    }

    pub(crate) fn save_to(&self, path: &Path) -> Result<(), MemoryError> {
        if path.exists() {
            std::fs::remove_file(path)?;
        }
        let conn = self.conn.lock().expect("store lock");
        let mut dst = Connection::open(path)?;
        let backup = rusqlite::backup::Backup::new(&conn, &mut dst)?;
        backup.run_to_completion(256, std::time::Duration::ZERO, None)?;
        Ok(())
    }

    pub fn tables(&self) -> &[String] {
        &self.tables
    }

    pub fn execute(&self, query: &str) -> Result<ResultTable, SqlError> {
        let trimmed = query.trim().trim_end_matches(';').trim();
        let first = trimmed
            .split(|c: char| c.is_whitespace() || c == '(')
            .next()
            .unwrap_or("")
            .to_ascii_uppercase();
        if WRITE_KEYWORDS.contains(&first.as_str()) {
            return Err(SqlError::WriteAttempted(trimmed.to_string()));
        }
        if first != "SELECT" && first != "WITH" {
            return Err(SqlError::Syntax(format!(
                "only SELECT queries are supported, got `{first}`"
            )));
        }
        let conn = self.conn.lock().expect("store lock");
        let mut stmt = conn.prepare(trimmed).map_err(|e| classify_prepare_error(&e))?;
        if !stmt.readonly() {
            return Err(SqlError::WriteAttempted(trimmed.to_string()));
        }
        let column_names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let ncols = column_names.len();
        let mut rows_out = Vec::new();
        let mut rows = stmt
            .query([])
            .map_err(|e| SqlError::Execution(e.to_string()))?;
        while let Some(row) = rows.next().map_err(|e| SqlError::Execution(e.to_string()))? {
            let mut values = Vec::with_capacity(ncols);
            for i in 0..ncols {
                let v = row
                    .get_ref(i)
                    .map_err(|e| SqlError::Execution(e.to_string()))?;
                values.push(SqlValue::from(v));
            }
            rows_out.push(values);
        }
        Ok(ResultTable {
            column_names,
            rows: rows_out,
        })
    }

    fn columns(&self, table: &str) -> Vec<(String, String, bool, bool)> {
        let conn = self.conn.lock().expect("store lock");
        let mut stmt = conn
            .prepare("SELECT name, type, pk, \"notnull\" FROM pragma_table_info(?1) ORDER BY cid")
            .expect("pragma_table_info is valid");
        stmt.query_map([table], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, i64>(2)? > 0,
                r.get::<_, i64>(3)? > 0,
            ))
        })
        .expect("pragma query")
        .collect::<Result<Vec<_>, _>>()
        .expect("pragma rows")
    }

    /// Tables, column types and one sample row each, in a stable layout.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for table in &self.tables {
            let cols = self.columns(table);
            let col_text: Vec<String> = cols
                .iter()
                .map(|(name, ty, pk, _)| {
                    if *pk {
                        format!("{name} {ty} PRIMARY KEY")
                    } else {
                        format!("{name} {ty}")
                    }
                })
                .collect();
            out.push_str(&format!("{table}({})\n", col_text.join(", ")));
            let sample = self
                .execute(&format!("SELECT * FROM \"{table}\" ORDER BY 1 LIMIT 1"))
                .ok()
                .and_then(|t| t.rows.into_iter().next());
            match sample {
                Some(row) => {
                    let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
                    out.push_str(&format!("  sample row: ({})\n", cells.join(", ")));
                }
                None => out.push_str("  (empty)\n"),
            }
        }
        out
    }

    pub fn row_count(&self, table: &str) -> usize {
        self.execute(&format!("SELECT COUNT(*) FROM \"{table}\""))
            .ok()
            .and_then(|t| t.rows.into_iter().next())
            .and_then(|r| match r.first() {
                Some(SqlValue::Integer(n)) => Some(*n as usize),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// SHA-256 over every listed table's full contents in a canonical row order.
    pub fn content_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for table in &self.tables {
            hasher.update(table.as_bytes());
            hasher.update([0u8]);
            let ncols = self.columns(table).len().max(1);
            let order: Vec<String> = (1..=ncols).map(|i| i.to_string()).collect();
            if let Ok(result) = self.execute(&format!(
                "SELECT * FROM \"{table}\" ORDER BY {}",
                order.join(", ")
            )) {
                for row in result.rows {
                    for v in row {
                        hasher.update(v.to_string().as_bytes());
                        hasher.update([0x1f]);
                    }
                    hasher.update([0x1e]);
                }
            }
        }
        hex::encode(hasher.finalize())
    }
}
