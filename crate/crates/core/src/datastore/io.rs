//! Line-delimited JSON with a schema header, and atomic file replacement.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: String,
}

impl Header {
    pub fn new(kind: &str) -> Self {
        Header {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
        }
    }
}

/// Write `path` through a temporary file in the same directory and rename
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    kind: &str,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    write_atomic(path, |w| {
        let io = |e| Error::io(path, e);
        serde_json::to_writer(&mut *w, &Header::new(kind))?;
        w.write_all(b"\n").map_err(io)?;
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    })
}

pub(crate) fn check_header(path: &Path, line: &str, kind: &str) -> Result<()> {
    let header: Header = serde_json::from_str(line).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    if header.kind != kind {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected a `{kind}` file, found `{}`", header.kind),
        });
    }
    Ok(())
}

/// Read a headed JSONL file. A final line without a trailing newline is a
/// torn append and is ignored.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut lineno = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if !buf.ends_with('\n') {
            break;
        }
        let line = buf.trim_end();
        if lineno == 1 {
            check_header(path, line, kind)?;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    if lineno == 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: 1,
            reason: "missing schema header".into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        a: u32,
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "{\"schema_version\":1,\"kind\":\"rec\"}\n{\"a\":1}\n{\"a\":\n").unwrap();
        match read_jsonl::<Rec>(&p, "rec") {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_kind_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, "rec", &[Rec { a: 1 }]).unwrap();
        assert!(read_jsonl::<Rec>(&p, "other").is_err());
        fs::write(&p, "{\"schema_version\":9,\"kind\":\"rec\"}\n").unwrap();
        assert!(matches!(read_jsonl::<Rec>(&p, "rec"), Err(Error::SchemaVersion { found: 9, .. })));
    }

    #[test]
    fn torn_tail_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "{\"schema_version\":1,\"kind\":\"rec\"}\n{\"a\":1}\n{\"a\":2").unwrap();
        assert_eq!(read_jsonl::<Rec>(&p, "rec").unwrap(), vec![Rec { a: 1 }]);
    }

    #[test]
    fn missing_file_named() {
        let err = read_jsonl::<Rec>(Path::new("/nonexistent/proposals.jsonl"), "rec").unwrap_err();
        assert!(err.to_string().contains("proposals.jsonl"));
    }
}
