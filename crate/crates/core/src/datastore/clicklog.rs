//! Append-only click log.
//!
//! Corrections are new records whose `supersedes` names the `seq` of the
//! record they replace; nothing is ever edited in place.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::io::{read_jsonl, write_jsonl};
use crate::annotator::ClickRecord;
use crate::geometry::Point;
use crate::{Error, Result};

const KIND: &str = "clicks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickEntry {
    pub seq: u64,
    pub image_id: String,
    pub class: String,
    pub annotator_id: String,
    pub x: f64,
    pub y: f64,
    pub time_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<u64>,
}

impl ClickEntry {
    pub fn to_record(&self) -> ClickRecord {
        ClickRecord {
            target_id: self.image_id.clone(),
            annotator_id: self.annotator_id.clone(),
            position: Point::new(self.x, self.y),
            response_time_ms: self.time_ms,
        }
    }
}

/// A click before the log assigns its sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct NewClick {
    pub class: String,
    pub record: ClickRecord,
    pub supersedes: Option<u64>,
}

impl NewClick {
    pub fn new(class: impl Into<String>, record: ClickRecord) -> Self {
        NewClick {
            class: class.into(),
            record,
            supersedes: None,
        }
    }
}

/// Single writer for one log file. Appends from any number of threads are
/// serialized through the internal lock and get strictly increasing `seq`.
#[derive(Debug)]
pub struct ClickLog {
    path: PathBuf,
    inner: Mutex<Inner>,
}

#[derive(Debug)]
struct Inner {
    file: File,
    next_seq: u64,
}

impl ClickLog {
    /// Open `path` for appending, creating it with a header if needed.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if !path.exists() {
            write_jsonl::<ClickEntry>(&path, KIND, &[])?;
        }
        let existing = read_clicks(&path)?;
        let next_seq = existing.iter().map(|e| e.seq + 1).max().unwrap_or(0);
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(ClickLog {
            path,
            inner: Mutex::new(Inner { file, next_seq }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append all clicks with one write and one sync. A crash can at worst
    /// leave a torn final line, which readers skip.
    pub fn append_many(&self, clicks: &[NewClick]) -> Result<Vec<ClickEntry>> {
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let mut buf = Vec::new();
        let mut out = Vec::with_capacity(clicks.len());
        for (k, c) in clicks.iter().enumerate() {
            if !c.record.position.is_finite() {
                return Err(Error::invalid("click position must be finite"));
            }
            let entry = ClickEntry {
                seq: inner.next_seq + k as u64,
                image_id: c.record.target_id.clone(),
                class: c.class.clone(),
                annotator_id: c.record.annotator_id.clone(),
                x: c.record.position.x,
                y: c.record.position.y,
                time_ms: c.record.response_time_ms,
                supersedes: c.supersedes,
            };
            serde_json::to_writer(&mut buf, &entry)?;
            buf.push(b'\n');
            out.push(entry);
        }
        inner.file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        inner.file.sync_data().map_err(|e| Error::io(&self.path, e))?;
        inner.next_seq += clicks.len() as u64;
        Ok(out)
    }

    pub fn append(&self, click: NewClick) -> Result<ClickEntry> {
        Ok(self.append_many(std::slice::from_ref(&click))?.remove(0))
    }

    pub fn read_all(&self) -> Result<Vec<ClickEntry>> {
        let _guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        read_clicks(&self.path)
    }
}

pub fn append_click(log: &ClickLog, class: &str, record: &ClickRecord) -> Result<ClickEntry> {
    log.append(NewClick::new(class, record.clone()))
}

/// Read a click log; a log that does not exist yet reads as empty.
pub fn read_clicks(path: &Path) -> Result<Vec<ClickEntry>> {
    match read_jsonl(path, KIND) {
        Err(Error::MissingFile(_)) => Ok(Vec::new()),
        other => other,
    }
}

/// Write a complete click file atomically (simulated clicks, exports).
pub fn write_clicks(path: &Path, entries: &[ClickEntry]) -> Result<()> {
    write_jsonl(path, KIND, entries)
}

/// Live clicks per (image id, class) in log order, with superseded records
/// removed.
pub fn effective_clicks(entries: &[ClickEntry]) -> BTreeMap<(String, String), Vec<ClickRecord>> {
    let dead: BTreeSet<u64> = entries.iter().filter_map(|e| e.supersedes).collect();
    let mut live: Vec<&ClickEntry> = entries.iter().filter(|e| !dead.contains(&e.seq)).collect();
    live.sort_by_key(|e| e.seq);
    let mut out: BTreeMap<(String, String), Vec<ClickRecord>> = BTreeMap::new();
    for e in live {
        out.entry((e.image_id.clone(), e.class.clone()))
            .or_default()
            .push(e.to_record());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn click(img: &str, ann: &str, x: f64) -> ClickRecord {
        ClickRecord::new(img, ann, Point::new(x, 2.0), 1500.0).unwrap()
    }

    #[test]
    fn empty_log_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_clicks(&dir.path().join("clicks.jsonl")).unwrap().is_empty());
        let log = ClickLog::open(dir.path().join("clicks.jsonl")).unwrap();
        assert!(log.read_all().unwrap().is_empty());
    }

    #[test]
    fn append_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let log = ClickLog::open(dir.path().join("clicks.jsonl")).unwrap();
        let a = append_click(&log, "dog", &click("img1", "ann", 3.5)).unwrap();
        let b = append_click(&log, "dog", &click("img2", "ann", 4.25)).unwrap();
        assert_eq!(log.read_all().unwrap(), vec![a.clone(), b]);
        assert_eq!(a.to_record(), click("img1", "ann", 3.5));
        // reopening continues the sequence
        drop(log);
        let log = ClickLog::open(dir.path().join("clicks.jsonl")).unwrap();
        assert_eq!(append_click(&log, "dog", &click("img3", "ann", 1.0)).unwrap().seq, 2);
    }

    #[test]
    fn concurrent_sessions_both_present() {
        let dir = tempfile::tempdir().unwrap();
        let log = Arc::new(ClickLog::open(dir.path().join("clicks.jsonl")).unwrap());
        let handles: Vec<_> = ["s1", "s2"]
            .into_iter()
            .map(|session| {
                let log = Arc::clone(&log);
                std::thread::spawn(move || {
                    for i in 0..200 {
                        append_click(&log, "cat", &click(&format!("img{i}"), session, i as f64)).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let all = log.read_all().unwrap();
        assert_eq!(all.len(), 400);
        let seqs: Vec<u64> = all.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (0..400).collect::<Vec<_>>());
        for s in ["s1", "s2"] {
            let xs: Vec<f64> = all.iter().filter(|e| e.annotator_id == s).map(|e| e.x).collect();
            assert_eq!(xs, (0..200).map(|i| i as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn supersedes_replaces_record() {
        let dir = tempfile::tempdir().unwrap();
        let log = ClickLog::open(dir.path().join("clicks.jsonl")).unwrap();
        let first = append_click(&log, "dog", &click("img1", "a", 1.0)).unwrap();
        append_click(&log, "dog", &click("img1", "b", 2.0)).unwrap();
        log.append(NewClick {
            supersedes: Some(first.seq),
            ..NewClick::new("dog", click("img1", "a", 9.0))
        })
        .unwrap();
        let eff = effective_clicks(&log.read_all().unwrap());
        let xs: Vec<f64> = eff[&("img1".to_string(), "dog".to_string())]
            .iter()
            .map(|c| c.position.x)
            .collect();
        assert_eq!(xs, vec![2.0, 9.0]);
    }
}
