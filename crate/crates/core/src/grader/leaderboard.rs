use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub token: String,
    /// Unix time, milliseconds.
    pub timestamp_ms: u64,
    pub spec: String,
    pub rewards: Vec<f64>,
    pub score: f64,
    pub protocol: String,
}

/// Append-only JSON-lines file. Each entry goes out in a single write.
pub struct Leaderboard {
    path: PathBuf,
    file: Mutex<File>,
}

impl Leaderboard {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &LeaderboardEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}

/// Parses every readable entry; corrupt lines are skipped with a warning.
pub fn read_entries(text: &str) -> Vec<LeaderboardEntry> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .filter_map(|(i, l)| match serde_json::from_str::<LeaderboardEntry>(l) {
            Ok(e) => Some(e),
            Err(err) => {
                log::warn!("leaderboard line {}: skipped ({err})", i + 1);
                None
            }
        })
        .collect()
}

/// Best entry per token, sorted by score descending, earlier first on ties.
pub fn ranking(entries: Vec<LeaderboardEntry>, top_n: usize) -> Vec<LeaderboardEntry> {
    let better = |a: &LeaderboardEntry, b: &LeaderboardEntry| {
        b.score.total_cmp(&a.score).then(a.timestamp_ms.cmp(&b.timestamp_ms))
    };
    let mut best: HashMap<String, LeaderboardEntry> = HashMap::new();
    for e in entries {
        match best.get(&e.token) {
            Some(cur) if better(cur, &e).is_le() => {}
            _ => {
                best.insert(e.token.clone(), e);
            }
        }
    }
    let mut list: Vec<LeaderboardEntry> = best.into_values().collect();
    list.sort_by(better);
    list.truncate(top_n);
    list
}

/// Ranked listing of the file at `path`; a missing file is an empty board.
pub fn leaderboard_report(path: &Path, top_n: usize) -> Result<Vec<LeaderboardEntry>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    Ok(ranking(read_entries(&text), top_n))
}
