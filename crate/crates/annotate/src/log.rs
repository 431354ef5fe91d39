//! Append-only JSONL event log with snapshot compaction.
//!
//! Layout inside the data directory:
//!
//! * `events.jsonl`: one [`Entry`] per line, each line synced before the
//!   append returns.
//! * `snapshot.json`: every entry up to `last_seq`, written atomically
//!   (temp file, sync, rename). After a snapshot the log is truncated.
//!
//! Replay loads the snapshot, then the log, skipping entries already covered
//! by the snapshot. A torn final line (crash mid-write) is dropped and cut off
//! the file; damage anywhere else is an error.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_FORMAT: &str = "vcr-annotate-snapshot";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("event log line {line} is corrupted: {message}")]
    Corrupted { line: usize, message: String },
    #[error("snapshot is unreadable: {0}")]
    Snapshot(String),
    #[error("sequence number {got} after {previous} is not increasing")]
    OutOfOrder { previous: u64, got: u64 },
}

/// One accepted score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEvent {
    pub sample_id: String,
    pub tagger_id: String,
    pub phase: u32,
    pub score: f64,
    /// Milliseconds since the Unix epoch, assigned by the service.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Score(ScoreEvent),
    PhaseOpened {
        phase: u32,
        timestamp_ms: u64,
    },
    TaggerRegistered {
        tagger_id: String,
        timestamp_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub seq: u64,
    #[serde(flatten)]
    pub record: Record,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    last_seq: u64,
    entries: Vec<Entry>,
}

/// What replay found on disk.
#[derive(Debug, Default)]
pub struct Replay {
    pub entries: Vec<Entry>,
    /// Bytes of an incomplete last line that were discarded.
    pub torn_bytes: usize,
    pub from_snapshot: usize,
}

pub struct EventLog {
    dir: PathBuf,
    file: File,
    next_seq: u64,
    since_snapshot: usize,
    snapshot_every: usize,
}

impl EventLog {
    /// Opens (creating if needed) the log in `dir` and replays it.
    /// `snapshot_every == 0` disables automatic compaction.
    pub fn open(
        dir: impl AsRef<Path>,
        snapshot_every: usize,
    ) -> Result<(EventLog, Replay), LogError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut replay = Replay::default();
        let mut last = 0u64;
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let bytes = fs::read(&snap_path)?;
            let snap: Snapshot =
                serde_json::from_slice(&bytes).map_err(|e| LogError::Snapshot(e.to_string()))?;
            if snap.format != SNAPSHOT_FORMAT {
                return Err(LogError::Snapshot(format!(
                    "unexpected format `{}`",
                    snap.format
                )));
            }
            for e in &snap.entries {
                if e.seq <= last {
                    return Err(LogError::OutOfOrder {
                        previous: last,
                        got: e.seq,
                    });
                }
                last = e.seq;
            }
            if last != snap.last_seq {
                return Err(LogError::Snapshot(format!(
                    "last_seq {} but entries end at {last}",
                    snap.last_seq
                )));
            }
            replay.from_snapshot = snap.entries.len();
            replay.entries = snap.entries;
        }

        let snapshot_last = last;
        let log_path = dir.join(LOG_FILE);
        let data = if log_path.exists() {
            fs::read(&log_path)?
        } else {
            Vec::new()
        };
        let mut good_len = 0usize;
        let mut since_snapshot = 0usize;
        let mut start = 0usize;
        let mut line_no = 0usize;
        while start < data.len() {
            line_no += 1;
            let Some(nl) = data[start..].iter().position(|&b| b == b'\n') else {
                replay.torn_bytes = data.len() - start;
                break;
            };
            let line = &data[start..start + nl];
            let end = start + nl + 1;
            if !line.iter().all(u8::is_ascii_whitespace) {
                match serde_json::from_slice::<Entry>(line) {
                    Ok(e) => {
                        since_snapshot += 1;
                        if e.seq > last {
                            last = e.seq;
                            replay.entries.push(e);
                        } else if e.seq > snapshot_last {
                            return Err(LogError::OutOfOrder {
                                previous: last,
                                got: e.seq,
                            });
                        }
                    }
                    Err(_) if end == data.len() => {
                        // a complete but garbled final line is treated as torn too
                        replay.torn_bytes = data.len() - start;
                        break;
                    }
                    Err(err) => {
                        return Err(LogError::Corrupted {
                            line: line_no,
                            message: err.to_string(),
                        })
                    }
                }
            }
            good_len = end;
            start = end;
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        if replay.torn_bytes > 0 {
            file.set_len(good_len as u64)?;
            file.sync_all()?;
        }
        sync_dir(&dir)?;
        let log = EventLog {
            dir,
            file,
            next_seq: last + 1,
            since_snapshot,
            snapshot_every,
        };
        Ok((log, replay))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends a record and syncs it to disk; the returned entry is durable.
    pub fn append(&mut self, record: Record) -> Result<Entry, LogError> {
        let entry = Entry {
            seq: self.next_seq,
            record,
        };
        let mut line = serde_json::to_vec(&entry).expect("log entries always serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.next_seq += 1;
        self.since_snapshot += 1;
        Ok(entry)
    }

    pub fn snapshot_due(&self) -> bool {
        self.snapshot_every > 0 && self.since_snapshot >= self.snapshot_every
    }

    /// Writes `entries` (the full history) as the new snapshot and empties
    /// the log.
    pub fn compact(&mut self, entries: &[Entry]) -> Result<(), LogError> {
        let last_seq = entries.last().map_or(0, |e| e.seq);
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            last_seq,
            entries: entries.to_vec(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &snap).map_err(io::Error::from)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        sync_dir(&self.dir)?;
        self.file.set_len(0)?;
        self.file.sync_all()?;
        self.since_snapshot = 0;
        Ok(())
    }
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    match File::open(dir) {
        Ok(d) => d.sync_all().or(Ok(())),
        Err(_) => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(sample: &str, tagger: &str) -> Record {
        Record::Score(ScoreEvent {
            sample_id: sample.into(),
            tagger_id: tagger.into(),
            phase: 1,
            score: 0.75,
            timestamp_ms: 5,
        })
    }

    #[test]
    fn append_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut log, replay) = EventLog::open(dir.path(), 0).unwrap();
            assert!(replay.entries.is_empty());
            assert_eq!(log.append(score("a", "t")).unwrap().seq, 1);
            assert_eq!(log.append(score("b", "t")).unwrap().seq, 2);
        }
        let (mut log, replay) = EventLog::open(dir.path(), 0).unwrap();
        assert_eq!(replay.entries.len(), 2);
        assert_eq!(replay.entries[1].record, score("b", "t"));
        assert_eq!(log.append(score("c", "t")).unwrap().seq, 3);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut log, _) = EventLog::open(dir.path(), 0).unwrap();
            log.append(score("a", "t")).unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"seq":2,"kind":"sco"#).unwrap();
        drop(f);
        let (mut log, replay) = EventLog::open(dir.path(), 0).unwrap();
        assert_eq!(replay.entries.len(), 1);
        assert!(replay.torn_bytes > 0);
        assert_eq!(log.append(score("b", "t")).unwrap().seq, 2);
        drop(log);
        let (_, replay) = EventLog::open(dir.path(), 0).unwrap();
        assert_eq!(replay.entries.len(), 2);
        assert_eq!(replay.torn_bytes, 0);
    }

    #[test]
    fn damage_before_the_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        fs::write(
            &path,
            "not json\n{\"seq\":1,\"kind\":\"phase_opened\",\"phase\":2,\"timestamp_ms\":0}\n",
        )
        .unwrap();
        assert!(matches!(
            EventLog::open(dir.path(), 0),
            Err(LogError::Corrupted { line: 1, .. })
        ));
    }

    #[test]
    fn compaction_survives_a_crash_before_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (mut log, _) = EventLog::open(dir.path(), 2).unwrap();
        let mut all = vec![log.append(score("a", "t")).unwrap()];
        all.push(log.append(score("b", "t")).unwrap());
        assert!(log.snapshot_due());
        let before = fs::read(dir.path().join(LOG_FILE)).unwrap();
        log.compact(&all).unwrap();
        assert!(!log.snapshot_due());
        assert_eq!(fs::metadata(dir.path().join(LOG_FILE)).unwrap().len(), 0);
        all.push(log.append(score("c", "t")).unwrap());
        drop(log);
        let (_, replay) = EventLog::open(dir.path(), 2).unwrap();
        assert_eq!(replay.entries, all);
        assert_eq!(replay.from_snapshot, 2);

        // snapshot renamed but the old log lines still present
        let mut stale = before.clone();
        stale.extend(fs::read(dir.path().join(LOG_FILE)).unwrap());
        fs::write(dir.path().join(LOG_FILE), stale).unwrap();
        let (_, replay) = EventLog::open(dir.path(), 2).unwrap();
        assert_eq!(replay.entries, all);
    }
}
