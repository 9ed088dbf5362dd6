use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::report::UpdateReport;
use crate::rollout::EpisodeStats;

/// First line of every run log.
pub const RUNLOG_HEADER: &str = "# polgrad-runlog v1";

/// Fixed columns preceding [`UpdateReport::COLUMNS`].
pub const BASE_COLUMNS: [&str; 7] =
    ["update", "total_steps", "episodes", "mean_reward", "rolling_mean", "rolling_std", "mean_final_distance"];

pub fn column_names() -> Vec<&'static str> {
    BASE_COLUMNS.iter().chain(UpdateReport::COLUMNS.iter()).copied().collect()
}

/// `(mean, population std)` of `xs`; `None` when empty.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    Some((m, v.sqrt()))
}

/// Trailing-window statistics over a stream of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingWindow {
    pub size: usize,
    pub samples: VecDeque<f64>,
}

impl RollingWindow {
    pub fn new(size: usize) -> Self {
        Self { size: size.max(1), samples: VecDeque::new() }
    }

    pub fn push(&mut self, x: f64) {
        if self.samples.len() == self.size {
            self.samples.pop_front();
        }
        self.samples.push_back(x);
    }

    pub fn stats(&self) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self.samples.iter().copied().collect();
        mean_std(&xs)
    }
}

/// Trailing `window`-sample mean and population std at every index.
pub fn rolling_stats(xs: &[f64], window: usize) -> Vec<(f64, f64)> {
    let w = window.max(1);
    (0..xs.len()).map(|i| mean_std(&xs[(i + 1).saturating_sub(w)..=i]).expect("non-empty window")).collect()
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// One CSV row; the rolling statistics cover the trailing episode window.
pub fn format_row(
    update: u64,
    total_steps: u64,
    episodes: &[EpisodeStats],
    rolling: Option<(f64, f64)>,
    report: &UpdateReport,
) -> String {
    let rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
    let dists: Vec<f64> = episodes.iter().map(|e| e.final_distance).collect();
    let mut cells = vec![
        update.to_string(),
        total_steps.to_string(),
        episodes.len().to_string(),
        cell(mean_std(&rewards).map(|s| s.0)),
        cell(rolling.map(|s| s.0)),
        cell(rolling.map(|s| s.1)),
        cell(mean_std(&dists).map(|s| s.0)),
    ];
    cells.extend(report.cells());
    cells.join(",")
}

/// First line of the per-episode log.
pub const EPISODE_HEADER: &str = "# polgrad-episodes v1";

pub const EPISODE_COLUMNS: [&str; 5] = ["update", "total_steps", "reward", "length", "final_distance"];

pub fn format_episode(update: u64, total_steps: u64, e: &EpisodeStats) -> String {
    format!("{update},{total_steps},{:e},{},{:e}", e.reward, e.length, e.final_distance)
}

/// Appending CSV writer with a versioned header and a column row, flushed
/// after every line.
pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path, header: &str, columns: &[&str]) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{header}")?;
        writeln!(out, "{}", columns.join(","))?;
        out.flush()?;
        Ok(Self { out })
    }

    /// Reopens `path`, keeping only rows with `update <= last_update`.
    pub fn resume(path: &Path, header: &str, columns: &[&str], last_update: u64) -> io::Result<Self> {
        let table = read_table(path)?;
        if table.header != header || table.columns != columns {
            return Err(invalid(format!("{}: schema differs from `{header}`", path.display())));
        }
        let mut w = Self::create(path, header, columns)?;
        for row in table.rows.iter().filter(|r| r.update <= last_update) {
            w.write_line(&row.raw)?;
        }
        drop(w);
        Ok(Self { out: BufWriter::new(OpenOptions::new().append(true).open(path)?) })
    }

    pub fn write_line(&mut self, line: &str) -> io::Result<()> {
        writeln!(self.out, "{line}")?;
        self.out.flush()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub update: u64,
    /// Present when the table has a `total_steps` column.
    pub total_steps: Option<u64>,
    /// One entry per column; empty cells are `None`.
    pub cells: Vec<Option<f64>>,
    pub raw: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTable {
    pub header: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl RunTable {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.cells.get(k).copied().flatten()).collect())
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Parses a log written by [`LogWriter`].
pub fn read_table(path: &Path) -> io::Result<RunTable> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let header = first.trim().to_string();
    if !header.starts_with("# polgrad-") {
        return Err(invalid(format!("{}: missing `# polgrad-...` header", path.display())));
    }
    let columns: Vec<String> = match lines.next().transpose()? {
        Some(l) => l.split(',').map(str::to_string).collect(),
        None => return Err(invalid(format!("{}: missing column row", path.display()))),
    };
    if columns.first().map(String::as_str) != Some("update") {
        return Err(invalid(format!("{}: first column must be `update`", path.display())));
    }
    let steps_col = columns.iter().position(|c| c == "total_steps");
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != columns.len() {
            return Err(invalid(format!("{}: row {} has {} cells", path.display(), i + 1, parts.len())));
        }
        let parse_u = |s: &str| s.parse::<u64>().map_err(|e| invalid(format!("row {}: {e}", i + 1)));
        let cells = parts
            .iter()
            .map(|s| if s.is_empty() { Ok(None) } else { s.parse::<f64>().map(Some) })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let total_steps = steps_col.map(|k| parse_u(parts[k])).transpose()?;
        rows.push(TableRow { update: parse_u(parts[0])?, total_steps, cells, raw: line });
    }
    Ok(RunTable { header, columns, rows })
}
