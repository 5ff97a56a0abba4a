use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the CSV output.
pub const CSV_HEADER: [&str; 8] = [
    "round",
    "loss",
    "grad_norm",
    "dist_to_opt",
    "dist_to_fixed",
    "eta",
    "alpha",
    "elapsed_ms",
];

/// Metrics of the global model after a round. Optional fields are empty in
/// CSV and `null` in JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    /// 1-based index of the completed round.
    pub round: usize,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub dist_to_opt: Option<f64>,
    pub dist_to_fixed: Option<f64>,
    /// Client learning rate used in the round (first client for mixed rates).
    pub eta: f64,
    pub alpha: f64,
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    Csv,
    Jsonl,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Serializes records to any writer; `path` only labels errors.
pub fn write_metrics_to<W: Write>(
    out: W,
    records: &[MetricsRecord],
    format: MetricsFormat,
    path: &Path,
) -> Result<()> {
    let mut out = BufWriter::new(out);
    match format {
        MetricsFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
            w.write_record(CSV_HEADER).map_err(|e| format_err(path, e))?;
            for r in records {
                w.serialize(r).map_err(|e| format_err(path, e))?;
            }
            w.flush().map_err(io_err(path))?;
        }
        MetricsFormat::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(|e| format_err(path, e))?;
                out.write_all(b"\n").map_err(io_err(path))?;
            }
        }
    }
    out.flush().map_err(io_err(path))
}

/// Writes records atomically: the file appears only once fully written.
pub fn write_metrics(records: &[MetricsRecord], path: &Path, format: MetricsFormat) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    write_metrics_to(tmp.as_file(), records, format, path)?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn read_metrics(path: &Path, format: MetricsFormat) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    match format {
        MetricsFormat::Csv => {
            let mut r = csv::Reader::from_reader(file);
            let header = r.headers().map_err(|e| format_err(path, e))?;
            if header.iter().ne(CSV_HEADER) {
                return Err(format_err(path, "unexpected CSV header"));
            }
            r.deserialize()
                .map(|rec| rec.map_err(|e| format_err(path, e)))
                .collect()
        }
        MetricsFormat::Jsonl => BufReader::new(file)
            .lines()
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
            .map(|line| {
                let line = line.map_err(io_err(path))?;
                serde_json::from_str(&line).map_err(|e| format_err(path, e))
            })
            .collect(),
    }
}
