//! JSON-lines metrics sink.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

use enas_core::trainer::RunRecord;

pub fn row_json(r: &RunRecord, timestamp: bool) -> Value {
    let metrics: Map<String, Value> = r.values.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let mut row = json!({
        "phase": r.phase.name(),
        "step": r.step,
        "epoch": r.epoch,
        "seed": r.seed,
        "genome": r.genome,
        "metrics": metrics,
    });
    if timestamp {
        let ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        row["timestamp_ms"] = json!(ms);
    }
    row
}

/// Append-only writer; remembers how many rows the file holds.
pub struct MetricsSink {
    path: PathBuf,
    out: BufWriter<File>,
    rows: u64,
    timestamps: bool,
}

impl MetricsSink {
    pub fn create(path: &Path, timestamps: bool) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(MetricsSink {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
            rows: 0,
            timestamps,
        })
    }

    /// Opens an existing file keeping only its first `rows` rows, so a
    /// resumed run continues exactly where its checkpoint was taken.
    pub fn resume(path: &Path, rows: u64, timestamps: bool) -> Result<Self> {
        let mut kept = Vec::new();
        if path.exists() {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            for line in BufReader::new(f).lines().take(rows as usize) {
                kept.push(line?);
            }
        }
        anyhow::ensure!(
            kept.len() as u64 == rows,
            "{} holds {} rows but the checkpoint expects {rows}",
            path.display(),
            kept.len()
        );
        let mut sink = Self::create(path, timestamps)?;
        for l in kept {
            writeln!(sink.out, "{l}")?;
        }
        sink.rows = rows;
        Ok(sink)
    }

    pub fn append(path: &Path, timestamps: bool) -> Result<Self> {
        let rows = if path.exists() {
            BufReader::new(File::open(path)?).lines().count() as u64
        } else {
            0
        };
        let f = OpenOptions::new().create(true).append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(MetricsSink {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
            rows,
            timestamps,
        })
    }

    pub fn write(&mut self, r: &RunRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, &row_json(r, self.timestamps))?;
        self.out.write_all(b"\n")?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().with_context(|| format!("flushing {}", self.path.display()))
    }
}
