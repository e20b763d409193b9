//! Summaries of metrics CSVs and the batch-size × normalization suite.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};

use crate::config::{normalize_key, read_key_values, TrainConfig};
use crate::data::Mnist;
use crate::error::{BenchError, Result};
use crate::train::{render_csv, run_training, CsvSink, MetricRow, CSV_HEADER};

/// Number of trailing epochs averaged for the headline accuracy.
pub const FINAL_EPOCHS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalSummary {
    /// Mean test accuracy over the last five epochs.
    pub final_mean: f64,
    pub best_epoch: usize,
    pub best_test_acc: f64,
}

pub fn report_final(rows: &[MetricRow]) -> Result<FinalSummary> {
    if rows.len() < FINAL_EPOCHS {
        return Err(BenchError::Config(format!(
            "need at least {FINAL_EPOCHS} epochs to report, got {}",
            rows.len()
        )));
    }
    let tail = &rows[rows.len() - FINAL_EPOCHS..];
    let final_mean = tail.iter().map(|r| r.test_acc).sum::<f64>() / FINAL_EPOCHS as f64;
    let best = rows
        .iter()
        .fold(&rows[0], |best, r| if r.test_acc > best.test_acc { r } else { best });
    Ok(FinalSummary { final_mean, best_epoch: best.epoch, best_test_acc: best.test_acc })
}

/// Parses a metrics CSV, skipping `#` comment lines and the header.
pub fn parse_metrics_csv(text: &str, origin: &Path) -> Result<Vec<MetricRow>> {
    let bad = |line: usize, why: &str| BenchError::ingestion(origin, format!("line {line}: {why}"));
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(bad(i + 1, "missing metrics header"));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(i + 1, "expected 5 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(i + 1, "invalid number"));
        let row = MetricRow {
            epoch: fields[0].trim().parse().map_err(|_| bad(i + 1, "invalid epoch"))?,
            train_loss: num(fields[1])?,
            train_acc: num(fields[2])?,
            test_acc: num(fields[3])?,
            wall_seconds: num(fields[4])?,
        };
        if !(0.0..=1.0).contains(&row.train_acc) || !(0.0..=1.0).contains(&row.test_acc) {
            return Err(bad(i + 1, "accuracy outside [0, 1]"));
        }
        if rows.last().is_some_and(|prev| prev.epoch >= row.epoch) {
            return Err(bad(i + 1, "epochs must increase"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::ingestion(path, e.to_string()))?;
    parse_metrics_csv(&text, path)
}

/// One normalization column of the suite, e.g. `gn:16` or `ebn:global`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormEntry {
    pub label: String,
    pub norm: String,
    pub option: Option<String>,
}

impl NormEntry {
    pub fn parse(text: &str) -> Self {
        let label = text.trim().to_string();
        let (norm, option) = match label.split_once(':') {
            Some((n, o)) => (n.trim().to_ascii_lowercase(), Some(o.trim().to_string())),
            None => (label.to_ascii_lowercase(), None),
        };
        NormEntry { label, norm, option }
    }

    fn apply(&self, config: &mut TrainConfig) -> Result<()> {
        config.set("norm", &self.norm)?;
        match (self.norm.as_str(), &self.option) {
            (_, None) => Ok(()),
            ("gn", Some(g)) => config.set("groups", g),
            ("ebn", Some(mode)) => config.set("std-center", mode),
            (other, Some(o)) => Err(BenchError::Config(format!("{other} takes no option (got {o:?})"))),
        }
    }
}

/// Grid of runs: one row per batch size, one column per normalization,
/// each cell averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteMatrix {
    pub base: TrainConfig,
    pub batch_sizes: Vec<usize>,
    pub norms: Vec<NormEntry>,
    pub seeds: Vec<u64>,
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| BenchError::Config(format!("invalid entry {s:?} in {key}"))))
        .collect()
}

impl SuiteMatrix {
    /// Parses a matrix file: `batch-sizes`, `norms` and `seeds` lists plus
    /// any training option applied to every cell.
    pub fn from_pairs(base: TrainConfig, pairs: &[(String, String)]) -> Result<Self> {
        let mut m = SuiteMatrix { base, batch_sizes: vec![], norms: vec![], seeds: vec![] };
        for (k, v) in pairs {
            match normalize_key(k).as_str() {
                "batch-sizes" => m.batch_sizes = list(k, v)?,
                "norms" => m.norms = v.split(',').filter(|s| !s.trim().is_empty()).map(NormEntry::parse).collect(),
                "seeds" => m.seeds = list(k, v)?,
                other => m.base.set(other, v)?,
            }
        }
        if m.batch_sizes.is_empty() {
            m.batch_sizes.push(m.base.batch_size);
        }
        if m.norms.is_empty() {
            m.norms.push(NormEntry::parse(&m.base.norm));
        }
        if m.seeds.is_empty() {
            m.seeds.push(m.base.seed);
        }
        Ok(m)
    }

    pub fn from_file(base: TrainConfig, path: &Path) -> Result<Self> {
        SuiteMatrix::from_pairs(base, &read_key_values(path)?)
    }

    /// Config of one cell and seed.
    pub fn cell_config(&self, batch_size: usize, norm: &NormEntry, seed: u64) -> Result<TrainConfig> {
        let mut c = self.base.clone();
        c.batch_size = batch_size;
        c.seed = seed;
        norm.apply(&mut c)?;
        c.validate()?;
        Ok(c)
    }

    pub fn run_path(out_dir: &Path, batch_size: usize, norm: &NormEntry, seed: u64) -> PathBuf {
        let label: String = norm
            .label
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() { ch.to_ascii_lowercase() } else { '-' })
            .collect();
        out_dir.join("runs").join(format!("{label}_bs{batch_size}_seed{seed}.csv"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellResult {
    /// Final-5 accuracy per seed and its mean.
    Done { per_seed: Vec<f64>, mean: f64 },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteTable {
    pub batch_sizes: Vec<usize>,
    pub norms: Vec<String>,
    /// `cells[row][column]`
    pub cells: Vec<Vec<CellResult>>,
    pub seeds: Vec<u64>,
}

impl SuiteTable {
    pub fn get(&self, batch_size: usize, norm: &str) -> Option<&CellResult> {
        let r = self.batch_sizes.iter().position(|&b| b == batch_size)?;
        let c = self.norms.iter().position(|n| n == norm)?;
        Some(&self.cells[r][c])
    }

    pub fn to_csv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = format!(
            "# final-{FINAL_EPOCHS}-epoch mean test accuracy, averaged over seeds {}\nbatch_size",
            seeds.join(" ")
        );
        for n in &self.norms {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (bs, row) in self.batch_sizes.iter().zip(&self.cells) {
            let _ = write!(s, "{bs}");
            for cell in row {
                match cell {
                    CellResult::Done { mean, .. } => {
                        let _ = write!(s, ",{mean:.6}");
                    }
                    CellResult::Failed(_) => s.push_str(",failed"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Reuses a finished run CSV whose preamble matches `config`.
fn completed_run(path: &Path, config: &TrainConfig) -> Option<Vec<MetricRow>> {
    let text = fs::read_to_string(path).ok()?;
    let expected = format!("# {}", config.describe());
    if text.lines().next()? != expected {
        return None;
    }
    let rows = parse_metrics_csv(&text, path).ok()?;
    (rows.len() == config.epochs).then_some(rows)
}

fn run_cell_seed(config: &TrainConfig, data: &Mnist, path: &Path, resume: bool) -> Result<Vec<MetricRow>> {
    if resume {
        if let Some(rows) = completed_run(path, config) {
            info!("reusing {}", path.display());
            return Ok(rows);
        }
    }
    let mut sink = CsvSink::create(path, config)?;
    let outcome = run_training(config, data, &mut |row| sink.push(row))?;
    Ok(outcome.rows)
}

/// Runs every cell and seed sequentially. A failing cell is recorded and
/// the suite moves on. Per-run CSVs go to `out_dir/runs/`.
pub fn run_suite(matrix: &SuiteMatrix, data: &Mnist, out_dir: &Path, resume: bool) -> SuiteTable {
    let mut cells = Vec::with_capacity(matrix.batch_sizes.len());
    for &bs in &matrix.batch_sizes {
        let mut row = Vec::with_capacity(matrix.norms.len());
        for norm in &matrix.norms {
            let mut per_seed = Vec::with_capacity(matrix.seeds.len());
            let mut failure = None;
            for &seed in &matrix.seeds {
                let path = SuiteMatrix::run_path(out_dir, bs, norm, seed);
                let result = matrix
                    .cell_config(bs, norm, seed)
                    .and_then(|cfg| run_cell_seed(&cfg, data, &path, resume))
                    .and_then(|rows| report_final(&rows));
                match result {
                    Ok(summary) => per_seed.push(summary.final_mean),
                    Err(e) => {
                        error!("cell batch={bs} norm={} seed={seed} failed: {e}", norm.label);
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            row.push(match failure {
                Some(msg) => CellResult::Failed(msg),
                None => {
                    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
                    CellResult::Done { per_seed, mean }
                }
            });
        }
        cells.push(row);
    }
    SuiteTable {
        batch_sizes: matrix.batch_sizes.clone(),
        norms: matrix.norms.iter().map(|n| n.label.clone()).collect(),
        cells,
        seeds: matrix.seeds.clone(),
    }
}

/// Writes the metrics CSV for a finished run in one go.
pub fn write_metrics_csv(path: &Path, config: &TrainConfig, rows: &[MetricRow]) -> Result<()> {
    fs::write(path, render_csv(config, rows)).map_err(|e| BenchError::io(path, e))
}
