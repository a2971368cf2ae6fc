//! Per-evaluation metrics rows and their CSV encoding.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{LabError, Result};

/// One evaluation snapshot. Wall-clock time is kept out of this row (see
/// [`TimingWriter`]) so that identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub episodes: u64,
    pub learner_steps: u64,
    /// Mean undiscounted return of training episodes finished since the
    /// previous row; NaN if none finished.
    pub train_return: f64,
    /// Undiscounted return of one greedy episode from the start state.
    pub eval_return: f64,
    pub q_right: f64,
    pub q_left: f64,
    pub oracle_right: f64,
    pub oracle_left: f64,
    /// Mean effective CLB coefficient over the period's learner steps.
    pub alpha_eff: f64,
    pub clb_subtraction: f64,
    /// Mean normalized interpolation weight per horizon `0..=H`.
    pub weights: Vec<f64>,
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Mean training loss per dynamics member.
    pub dynamics_loss: Vec<f64>,
}

impl MetricsRow {
    /// Signed estimation error `Q̂ - Q`; positive means overestimation.
    pub fn bias_right(&self) -> f64 {
        evaluate_bias(self.q_right, self.oracle_right)
    }

    pub fn bias_left(&self) -> f64 {
        evaluate_bias(self.q_left, self.oracle_left)
    }
}

pub fn evaluate_bias(estimate: f64, oracle: f64) -> f64 {
    estimate - oracle
}

/// Column names for a run with horizon `horizon` and `members` dynamics
/// members (zero without a model).
pub fn header(horizon: usize, members: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "env_steps",
        "episodes",
        "learner_steps",
        "train_return",
        "eval_return",
        "q_s0_right",
        "q_s0_left",
        "oracle_right",
        "oracle_left",
        "bias_right",
        "bias_left",
        "alpha_eff",
        "clb_subtraction",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..=horizon).map(|h| format!("omega_h{h}")));
    cols.push("critic_loss".into());
    cols.push("actor_loss".into());
    cols.extend((0..members).map(|m| format!("dyn_loss_m{m}")));
    cols
}

/// `%g`-style rendering with six significant digits.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let fixed = format!("{x:.*}", (5 - exp) as usize);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn encode(row: &MetricsRow) -> Vec<String> {
    let mut out = vec![
        row.env_steps.to_string(),
        row.episodes.to_string(),
        row.learner_steps.to_string(),
    ];
    let floats = [
        row.train_return,
        row.eval_return,
        row.q_right,
        row.q_left,
        row.oracle_right,
        row.oracle_left,
        row.bias_right(),
        row.bias_left(),
        row.alpha_eff,
        row.clb_subtraction,
    ];
    out.extend(floats.iter().map(|&v| format_float(v)));
    out.extend(row.weights.iter().map(|&v| format_float(v)));
    out.push(format_float(row.critic_loss));
    out.push(format_float(row.actor_loss));
    out.extend(row.dynamics_loss.iter().map(|&v| format_float(v)));
    out
}

/// Append-only CSV sink, flushed after every row.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
    horizon: usize,
    members: usize,
}

impl MetricsWriter {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: &Path, horizon: usize, members: usize) -> Result<Self> {
        let file = File::create(path).map_err(LabError::io(path))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner.write_record(header(horizon, members))?;
        inner.flush().map_err(LabError::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
            horizon,
            members,
        })
    }

    /// Reopens an existing file for appending after a resume, keeping the
    /// first `rows` data rows.
    pub fn resume(path: &Path, horizon: usize, members: usize, rows: usize) -> Result<Self> {
        let kept = if path.exists() { read_rows(path)? } else { Vec::new() };
        if kept.len() < rows {
            return Err(LabError::Format {
                path: path.to_path_buf(),
                message: format!("expected at least {rows} rows, found {}", kept.len()),
            });
        }
        let mut writer = Self::create(path, horizon, members)?;
        for record in &kept[..rows] {
            writer.inner.write_record(record)?;
        }
        writer.inner.flush().map_err(LabError::io(path))?;
        Ok(writer)
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if row.weights.len() != self.horizon + 1 || row.dynamics_loss.len() != self.members {
            return Err(LabError::Config(format!(
                "metrics row shape ({} weights, {} model losses) does not match the header",
                row.weights.len(),
                row.dynamics_loss.len()
            )));
        }
        self.inner.write_record(encode(row))?;
        self.inner.flush().map_err(LabError::io(&self.path))
    }
}

/// Raw string records of a metrics file, header excluded.
pub fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .records()
        .map(|r| Ok(r?.iter().map(str::to_string).collect()))
        .collect()
}

/// A metrics file parsed into named float columns.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let columns = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|e| LabError::Format {
                        path: path.to_path_buf(),
                        message: format!("bad number `{v}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.column(name)?.last().copied()
    }
}

/// Wall-clock companion of the metrics file: `env_steps,wall_seconds`.
pub struct TimingWriter {
    path: PathBuf,
    file: BufWriter<File>,
}

impl TimingWriter {
    pub fn create(path: &Path, append: bool) -> Result<Self> {
        let exists = append && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)
            .map_err(LabError::io(path))?;
        let mut file = BufWriter::new(file);
        if !exists {
            writeln!(file, "env_steps,wall_seconds").map_err(LabError::io(path))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, env_steps: u64, seconds: f64) -> Result<()> {
        writeln!(self.file, "{env_steps},{seconds:.3}").map_err(LabError::io(&self.path))?;
        self.file.flush().map_err(LabError::io(&self.path))
    }
}
