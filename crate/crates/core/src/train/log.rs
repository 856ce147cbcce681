use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub sentences_seen: u64,
    pub lr: f64,
    /// Mean per-token loss since the previous record.
    pub train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub expected_error: Option<f64>,
    pub wall_time: Option<f64>,
}

/// Append-only JSON-lines log. The first line is a header object holding
/// every effective setting; each following line is a [`LogRecord`].
pub struct TrainLog {
    records: Vec<LogRecord>,
    lines: Vec<String>,
    sink: Option<(PathBuf, File)>,
    started: Option<Instant>,
}

impl TrainLog {
    /// In-memory log. `record_wall_time` adds elapsed seconds to records.
    pub fn new(header: &serde_json::Value, record_wall_time: bool) -> Result<Self> {
        let mut log = Self {
            records: Vec::new(),
            lines: Vec::new(),
            sink: None,
            started: record_wall_time.then(Instant::now),
        };
        log.write_line(serde_json::to_string(
            &serde_json::json!({ "header": header }),
        )?)?;
        Ok(log)
    }

    /// Log that also writes every line to `path` (truncated first) as it is
    /// produced.
    pub fn to_file(
        path: &Path,
        header: &serde_json::Value,
        record_wall_time: bool,
    ) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            records: Vec::new(),
            lines: Vec::new(),
            sink: Some((path.to_owned(), file)),
            started: record_wall_time.then(Instant::now),
        };
        log.write_line(serde_json::to_string(
            &serde_json::json!({ "header": header }),
        )?)?;
        Ok(log)
    }

    fn write_line(&mut self, line: String) -> Result<()> {
        if let Some((path, file)) = &mut self.sink {
            writeln!(file, "{line}").map_err(|e| Error::io(path.clone(), e))?;
            file.flush().map_err(|e| Error::io(path.clone(), e))?;
        }
        self.lines.push(line);
        Ok(())
    }

    /// Appends a record, filling in `wall_time` when enabled.
    pub fn push(&mut self, mut record: LogRecord) -> Result<()> {
        record.wall_time = self.started.map(|t| t.elapsed().as_secs_f64());
        let line = serde_json::to_string(&record)?;
        self.write_line(line)?;
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    /// The log as it appears on disk.
    pub fn to_text(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}
