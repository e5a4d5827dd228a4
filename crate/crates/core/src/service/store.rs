//! SQLite persistence: JSON entities, versioned per-document artifacts and
//! raw PDF blobs.

use std::path::Path;

use rusqlite::{params, Connection, OptionalExtension};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::ServiceError;

pub struct Store {
    conn: Connection,
}

impl From<rusqlite::Error> for ServiceError {
    fn from(e: rusqlite::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS entities (
    kind TEXT NOT NULL,
    id TEXT NOT NULL,
    json TEXT NOT NULL,
    PRIMARY KEY (kind, id)
);
CREATE TABLE IF NOT EXISTS artifacts (
    doc_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    version INTEGER NOT NULL,
    json TEXT NOT NULL,
    PRIMARY KEY (doc_id, kind, version)
);
CREATE TABLE IF NOT EXISTS blobs (
    doc_id TEXT PRIMARY KEY,
    bytes BLOB NOT NULL
);
";

impl Store {
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        Self::init(conn)
    }

    pub fn in_memory() -> Result<Self, ServiceError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, ServiceError> {
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn })
    }

    pub fn put<T: Serialize>(&self, kind: &str, id: &str, value: &T) -> Result<(), ServiceError> {
        self.conn.execute(
            "INSERT INTO entities (kind, id, json) VALUES (?1, ?2, ?3)
             ON CONFLICT (kind, id) DO UPDATE SET json = excluded.json",
            params![kind, id, serde_json::to_string(value)?],
        )?;
        Ok(())
    }

    pub fn delete(&self, kind: &str, id: &str) -> Result<(), ServiceError> {
        self.conn.execute("DELETE FROM entities WHERE kind = ?1 AND id = ?2", params![kind, id])?;
        Ok(())
    }

    pub fn all<T: DeserializeOwned>(&self, kind: &str) -> Result<Vec<T>, ServiceError> {
        let mut stmt = self.conn.prepare("SELECT json FROM entities WHERE kind = ?1 ORDER BY id")?;
        let rows = stmt.query_map(params![kind], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for json in rows {
            out.push(serde_json::from_str(&json?)?);
        }
        Ok(out)
    }

    /// Append a new version of a document artifact.
    pub fn put_artifact<T: Serialize>(&self, doc_id: &str, kind: &str, value: &T) -> Result<i64, ServiceError> {
        let version: i64 = self.conn.query_row(
            "SELECT COALESCE(MAX(version), 0) + 1 FROM artifacts WHERE doc_id = ?1 AND kind = ?2",
            params![doc_id, kind],
            |r| r.get(0),
        )?;
        self.conn.execute(
            "INSERT INTO artifacts (doc_id, kind, version, json) VALUES (?1, ?2, ?3, ?4)",
            params![doc_id, kind, version, serde_json::to_string(value)?],
        )?;
        Ok(version)
    }

    /// Latest version of every artifact of `kind`, keyed by document.
    pub fn latest_artifacts<T: DeserializeOwned>(&self, kind: &str) -> Result<Vec<(String, T)>, ServiceError> {
        let mut stmt = self.conn.prepare(
            "SELECT a.doc_id, a.json FROM artifacts a
             WHERE a.kind = ?1 AND a.version = (SELECT MAX(version) FROM artifacts b WHERE b.doc_id = a.doc_id AND b.kind = a.kind)
             ORDER BY a.doc_id",
        )?;
        let rows = stmt.query_map(params![kind], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
        let mut out = Vec::new();
        for row in rows {
            let (id, json) = row?;
            out.push((id, serde_json::from_str(&json)?));
        }
        Ok(out)
    }

    pub fn artifact_versions(&self, doc_id: &str, kind: &str) -> Result<i64, ServiceError> {
        Ok(self.conn.query_row(
            "SELECT COUNT(*) FROM artifacts WHERE doc_id = ?1 AND kind = ?2",
            params![doc_id, kind],
            |r| r.get(0),
        )?)
    }

    pub fn put_blob(&self, doc_id: &str, bytes: &[u8]) -> Result<(), ServiceError> {
        self.conn.execute(
            "INSERT INTO blobs (doc_id, bytes) VALUES (?1, ?2) ON CONFLICT (doc_id) DO UPDATE SET bytes = excluded.bytes",
            params![doc_id, bytes],
        )?;
        Ok(())
    }

    pub fn blob(&self, doc_id: &str) -> Result<Option<Vec<u8>>, ServiceError> {
        Ok(self
            .conn
            .query_row("SELECT bytes FROM blobs WHERE doc_id = ?1", params![doc_id], |r| r.get(0))
            .optional()?)
    }

    /// Drop every artifact version and the blob of a document.
    pub fn purge_doc(&self, doc_id: &str) -> Result<(), ServiceError> {
        self.conn.execute("DELETE FROM artifacts WHERE doc_id = ?1", params![doc_id])?;
        self.conn.execute("DELETE FROM blobs WHERE doc_id = ?1", params![doc_id])?;
        Ok(())
    }

    /// Run `f` inside one transaction.
    pub fn atomically<R>(&self, f: impl FnOnce(&Store) -> Result<R, ServiceError>) -> Result<R, ServiceError> {
        self.conn.execute_batch("BEGIN")?;
        match f(self) {
            Ok(r) => {
                self.conn.execute_batch("COMMIT")?;
                Ok(r)
            }
            Err(e) => {
                let _ = self.conn.execute_batch("ROLLBACK");
                Err(e)
            }
        }
    }
}
