use crate::store::{JournalEntry, JournalEvent};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use vqn_core::allocation::PairId;

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt journal entry at line {line}: {source}")]
    Corrupt { line: usize, source: serde_json::Error },
    #[error("journal sequence broken at line {line}: expected {expected}, found {found}")]
    Sequence { line: usize, expected: u64, found: u64 },
}

/// Append-only, ordered record of every state change.
pub trait Journal: Send {
    fn append(&mut self, entry: &JournalEntry) -> Result<(), JournalError>;
    fn load(&self) -> Result<Vec<JournalEntry>, JournalError>;
}

/// One JSON object per line, synced after every append. A torn final line left by a
/// crash mid-write is ignored on load.
pub struct FileJournal {
    path: PathBuf,
    file: File,
}

impl FileJournal {
    pub fn open(path: &Path) -> Result<Self, JournalError> {
        let io = |source| JournalError::Io {
            path: path.to_owned(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(path).map_err(io)?;
        let mut j = Self {
            path: path.to_owned(),
            file,
        };
        j.truncate_torn_tail()?;
        Ok(j)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn truncate_torn_tail(&mut self) -> Result<(), JournalError> {
        let io = |source| JournalError::Io {
            path: self.path.clone(),
            source,
        };
        let bytes = std::fs::read(&self.path).map_err(io)?;
        if bytes.last().is_some_and(|b| *b != b'\n') {
            let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
            self.file.set_len(keep as u64).map_err(io)?;
        }
        Ok(())
    }
}

impl Journal for FileJournal {
    fn append(&mut self, entry: &JournalEntry) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(entry).expect("entries serialize");
        line.push(b'\n');
        let io = |source| JournalError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    fn load(&self) -> Result<Vec<JournalEntry>, JournalError> {
        let file = File::open(&self.path).map_err(|source| JournalError::Io {
            path: self.path.clone(),
            source,
        })?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: JournalEntry =
                serde_json::from_str(&line).map_err(|source| JournalError::Corrupt { line: i + 1, source })?;
            let expected = out.len() as u64 + 1;
            if entry.seq != expected {
                return Err(JournalError::Sequence {
                    line: i + 1,
                    expected,
                    found: entry.seq,
                });
            }
            out.push(entry);
        }
        Ok(out)
    }
}

/// Shared in-memory journal; clones see the same entries, so a "restarted" service
/// can be handed the log of a dropped one.
#[derive(Clone, Default)]
pub struct MemoryJournal(Arc<Mutex<Vec<JournalEntry>>>);

impl MemoryJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> Vec<JournalEntry> {
        self.0.lock().unwrap().clone()
    }
}

impl Journal for MemoryJournal {
    fn append(&mut self, entry: &JournalEntry) -> Result<(), JournalError> {
        self.0.lock().unwrap().push(entry.clone());
        Ok(())
    }

    fn load(&self) -> Result<Vec<JournalEntry>, JournalError> {
        Ok(self.entries())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("entry {seq}: {pair} assigned to {user} while held by {holder}")]
    PairTaken { seq: u64, pair: PairId, user: String, holder: String },
    #[error("entry {seq}: {user} assigned {pair} while holding {held}")]
    UserHolds { seq: u64, pair: PairId, user: String, held: PairId },
    #[error("entry {seq}: {user} released {pair} without holding it")]
    StrayRelease { seq: u64, pair: PairId, user: String },
}

/// Replays assignments and releases and checks that the pair/user relation stays
/// one-to-one after every entry. Returns the peak number of pairs held at once.
pub fn audit(entries: &[JournalEntry]) -> Result<usize, AuditError> {
    let mut by_pair: BTreeMap<PairId, String> = BTreeMap::new();
    let mut by_user: BTreeMap<String, PairId> = BTreeMap::new();
    let mut peak = 0;
    for e in entries {
        match &e.event {
            JournalEvent::Assigned { pair, user, .. } => {
                if let Some(holder) = by_pair.get(pair) {
                    return Err(AuditError::PairTaken {
                        seq: e.seq,
                        pair: *pair,
                        user: user.clone(),
                        holder: holder.clone(),
                    });
                }
                if let Some(held) = by_user.get(user) {
                    return Err(AuditError::UserHolds {
                        seq: e.seq,
                        pair: *pair,
                        user: user.clone(),
                        held: *held,
                    });
                }
                by_pair.insert(*pair, user.clone());
                by_user.insert(user.clone(), *pair);
                peak = peak.max(by_pair.len());
            }
            JournalEvent::Released { pair, user, .. } => {
                if by_pair.get(pair) != Some(user) {
                    return Err(AuditError::StrayRelease {
                        seq: e.seq,
                        pair: *pair,
                        user: user.clone(),
                    });
                }
                by_pair.remove(pair);
                by_user.remove(user);
            }
            _ => {}
        }
    }
    Ok(peak)
}
