//! The metrics CSV: a version comment, a fixed header row and one row per environment step.
//! Reals use Rust's shortest round-trip formatting, so equal runs give equal bytes.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use metasaclag::trainer::{EvalSummary, MetricsRecord, MetricsSink};

use crate::error::{CliError, CliResult};

pub const VERSION_LINE: &str = "# metasaclag metrics v1";
pub const COLUMNS: [&str; 12] = [
    "step",
    "episode",
    "return",
    "violated",
    "nu",
    "eps",
    "alpha",
    "loss_qr",
    "loss_qc",
    "loss_pi",
    "loss_meta",
    "violation_rate",
];
pub const EVAL_COLUMNS: [&str; 5] = ["step", "episodes", "mean_return", "violation_rate", "success_rate"];

pub fn format_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.episode,
        r.episode_return,
        u8::from(r.violated),
        r.nu,
        r.eps,
        r.alpha,
        r.losses.qr,
        r.losses.qc,
        r.losses.pi,
        r.losses.meta,
        r.violation_rate
    )
}

fn create(path: &Path, columns: &[&str]) -> CliResult<BufWriter<File>> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{VERSION_LINE}\n{}", columns.join(",")).map_err(CliError::io(path))?;
    Ok(w)
}

/// Writes `metrics.csv` (flushed every row) and, when evaluations happen, `eval.csv`.
/// Also tracks the returns of recently completed episodes for the run summary.
pub struct CsvSink {
    path: PathBuf,
    out: BufWriter<File>,
    eval_path: PathBuf,
    eval: Option<BufWriter<File>>,
    returns: VecDeque<f64>,
    window: usize,
    episodes: u64,
    pub last: Option<MetricsRecord>,
}

impl CsvSink {
    pub fn create(dir: &Path, window: usize) -> CliResult<Self> {
        let path = dir.join("metrics.csv");
        Ok(Self {
            out: create(&path, &COLUMNS)?,
            path,
            eval_path: dir.join("eval.csv"),
            eval: None,
            returns: VecDeque::new(),
            window: window.max(1),
            episodes: 0,
            last: None,
        })
    }

    /// Mean return over the trailing window of completed episodes.
    pub fn mean_return(&self) -> f64 {
        if self.returns.is_empty() {
            return 0.0;
        }
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }

    fn io(&self, e: std::io::Error) -> metasaclag::Error {
        metasaclag::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", self.path.display())))
    }
}

impl MetricsSink for CsvSink {
    fn record(&mut self, r: &MetricsRecord) -> metasaclag::Result<()> {
        if r.episode > self.episodes {
            self.episodes = r.episode;
            if self.returns.len() == self.window {
                self.returns.pop_front();
            }
            self.returns.push_back(r.episode_return);
        }
        self.last = Some(*r);
        writeln!(self.out, "{}", format_row(r)).map_err(|e| self.io(e))?;
        self.out.flush().map_err(|e| self.io(e))
    }

    fn evaluation(&mut self, step: u64, s: &EvalSummary) -> metasaclag::Result<()> {
        if self.eval.is_none() {
            let w = create(&self.eval_path, &EVAL_COLUMNS).map_err(|e| match e {
                CliError::Io { source, .. } => self.io(source),
                other => metasaclag::Error::Config(other.to_string()),
            })?;
            self.eval = Some(w);
        }
        let w = self.eval.as_mut().expect("created above");
        let line = format!("{step},{},{},{},{}", s.episodes, s.mean_return, s.violation_rate, s.success_rate);
        let res = writeln!(w, "{line}").and_then(|_| w.flush());
        res.map_err(|e| self.io(e))
    }
}

/// One parsed metrics file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<[f64; 12]>,
    /// Lines that could not be parsed and were skipped.
    pub malformed: usize,
}

impl MetricsTable {
    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = COLUMNS.iter().position(|c| *c == name).expect("known column");
        self.rows.iter().map(|r| r[i]).collect()
    }
}

/// Parses a metrics CSV. Comment lines are ignored, a header row must match [`COLUMNS`],
/// and rows with the wrong arity or unparsable fields are counted and skipped.
pub fn read_metrics(text: &str) -> CliResult<MetricsTable> {
    let mut table = MetricsTable::default();
    let mut header_seen = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != COLUMNS.join(",") {
                return Err(CliError::Config(format!("unexpected metrics header `{line}`")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let mut row = [0.0; 12];
        let ok = fields.len() == 12
            && fields
                .iter()
                .zip(row.iter_mut())
                .all(|(f, slot)| f.trim().parse::<f64>().map(|v| *slot = v).is_ok());
        if ok {
            table.rows.push(row);
        } else {
            table.malformed += 1;
        }
    }
    if !header_seen {
        return Err(CliError::Config("metrics file has no header row".into()));
    }
    Ok(table)
}
