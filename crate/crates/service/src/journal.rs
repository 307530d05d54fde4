//! Append-only JSON-lines log, one file per session, replayed on startup.
//!
//! Replay is exact because every BO step is a deterministic function of the
//! session seed and the sequence of answers.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::api::{Choice, CreateSession};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Entry {
    Created {
        schema_version: u32,
        seed: u64,
        spec: CreateSession,
    },
    Outcome {
        duel_id: usize,
        winner: Choice,
    },
}

#[derive(Clone, Debug)]
pub struct Journal {
    dir: PathBuf,
}

impl Journal {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    pub fn append(&self, session_id: &str, entry: &Entry) -> io::Result<()> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(session_id))?;
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()
    }

    /// Every logged session as `(id, entries)`, ordered by id. A torn final line is dropped.
    pub fn load(&self) -> io::Result<Vec<(String, Vec<Entry>)>> {
        let mut out = Vec::new();
        for item in fs::read_dir(&self.dir)? {
            let path = item?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            out.push((id.to_owned(), read_entries(&path)?));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

fn read_entries(path: &Path) -> io::Result<Vec<Entry>> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<io::Result<_>>()?;
    let last = lines.len().saturating_sub(1);
    let mut entries = Vec::with_capacity(lines.len());
    for (k, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => entries.push(e),
            Err(_) if k == last => break,
            Err(e) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                ))
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let j = Journal::open(dir.path()).unwrap();
        let spec: CreateSession = serde_json::from_str(r#"{"dimension":2}"#).unwrap();
        let created = Entry::Created {
            schema_version: 1,
            seed: 9,
            spec,
        };
        let outcome = Entry::Outcome {
            duel_id: 0,
            winner: Choice::B,
        };
        j.append("x", &created).unwrap();
        j.append("x", &outcome).unwrap();
        let mut f = OpenOptions::new().append(true).open(j.path("x")).unwrap();
        f.write_all(b"{\"event\":\"outc").unwrap();
        assert_eq!(j.load().unwrap(), vec![("x".to_owned(), vec![created, outcome])]);
    }
}
