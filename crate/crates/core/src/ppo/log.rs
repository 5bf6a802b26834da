//! Per-update training log, persisted as CSV with one header row.
//!
//! | column | meaning |
//! |---|---|
//! | `update` | 1-based update number |
//! | `global_step` | environment steps taken so far, all actors |
//! | `episodes` | episodes that ended during this update's collection |
//! | `completed` | of those, episodes that cleared every goal |
//! | `mean_episode_reward` | mean return of those episodes (empty if none) |
//! | `mean_episode_length` / `min_episode_length` / `max_episode_length` | total steps per ended episode |
//! | `rolling_reward` | mean return of the last 100 ended episodes |
//! | `max_buffer_episode_steps` | largest in-episode step count seen in the buffer |
//! | `entropy` | mean policy entropy over the collected steps |
//! | `invalid_rate` | fraction of collected steps that were invalid clicks |
//! | `policy_loss` / `value_loss` / `loss_entropy` / `total_loss` | loss parts averaged over minibatches |
//! | `approx_kl` / `clip_fraction` | update diagnostics |
//! | `stuck` | entropy and invalid rate crossed the stuck thresholds |
//! | `status` | `ok`, `stuck-halt`, `masked-all-actions` or `non-finite-loss` |
//!
//! Wall-clock time is written to a separate `timing.csv` so that the log
//! itself is reproducible byte for byte.

use super::PpoError;
use serde::{Deserialize, Serialize};
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub update: u64,
    pub global_step: u64,
    pub episodes: u64,
    pub completed: u64,
    pub mean_episode_reward: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub min_episode_length: Option<u64>,
    pub max_episode_length: Option<u64>,
    pub rolling_reward: Option<f64>,
    pub max_buffer_episode_steps: u64,
    pub entropy: f64,
    pub invalid_rate: f64,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub loss_entropy: Option<f64>,
    pub total_loss: Option<f64>,
    pub approx_kl: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub stuck: bool,
    pub status: String,
}

/// Append-only log; rows are flushed to disk as they are added.
#[derive(Debug, Default)]
pub struct TrainLog {
    rows: Vec<LogRow>,
    path: Option<PathBuf>,
}

fn csv_err(e: csv::Error) -> PpoError {
    PpoError::Log(e.to_string())
}

impl TrainLog {
    pub fn in_memory() -> Self {
        TrainLog::default()
    }

    /// Starts a log file holding a header and the rows of `existing`
    /// (non-empty when resuming).
    pub fn create(path: &Path, existing: Vec<LogRow>) -> Result<Self, PpoError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
        w.write_record(Self::header()).map_err(csv_err)?;
        for r in &existing {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(TrainLog { rows: existing, path: Some(path.to_path_buf()) })
    }

    pub fn header() -> [&'static str; 20] {
        [
            "update",
            "global_step",
            "episodes",
            "completed",
            "mean_episode_reward",
            "mean_episode_length",
            "min_episode_length",
            "max_episode_length",
            "rolling_reward",
            "max_buffer_episode_steps",
            "entropy",
            "invalid_rate",
            "policy_loss",
            "value_loss",
            "loss_entropy",
            "total_loss",
            "approx_kl",
            "clip_fraction",
            "stuck",
            "status",
        ]
    }

    pub fn read(path: &Path) -> Result<Vec<LogRow>, PpoError> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }

    pub fn push(&mut self, row: LogRow) -> Result<(), PpoError> {
        if let Some(path) = &self.path {
            let file = OpenOptions::new().append(true).open(path)?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            w.serialize(&row).map_err(csv_err)?;
            w.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}

/// Appends `update,seconds` lines to a timing sidecar.
pub(super) fn append_timing(path: &Path, update: u64, seconds: f64) -> Result<(), PpoError> {
    use std::io::Write;
    let new = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if new {
        writeln!(f, "update,seconds")?;
    }
    writeln!(f, "{update},{seconds:.3}")?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;

    fn row(update: u64) -> LogRow {
        LogRow {
            update,
            global_step: update * 2048,
            episodes: 3,
            completed: 1,
            mean_episode_reward: Some(-1.25),
            mean_episode_length: Some(40.5),
            min_episode_length: Some(12),
            max_episode_length: Some(100),
            rolling_reward: None,
            max_buffer_episode_steps: 100,
            entropy: 4.76,
            invalid_rate: 0.8,
            policy_loss: Some(0.01),
            value_loss: None,
            loss_entropy: Some(4.7),
            total_loss: Some(0.2),
            approx_kl: Some(1e-4),
            clip_fraction: Some(0.0),
            stuck: false,
            status: "ok".into(),
        }
    }

    #[test]
    fn file_round_trip_and_resume_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut log = TrainLog::create(&path, Vec::new()).unwrap();
        for u in 1..=3 {
            log.push(row(u)).unwrap();
        }
        let back = TrainLog::read(&path).unwrap();
        assert_eq!(back, log.rows());
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), TrainLog::header().join(","));

        let kept: Vec<LogRow> = back.into_iter().take(2).collect();
        let mut resumed = TrainLog::create(&path, kept).unwrap();
        resumed.push(row(3)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }
}
