//! The training loop and per-epoch metrics.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ebn::SgdMomentum;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{BatchIterator, Dataset, Mnist};
use crate::error::{BenchError, Result};
use crate::model::{build_model, count_correct, EvalGraph, Mlp};

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,test_acc,wall_seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch,
            sig6(self.train_loss),
            sig6(self.train_acc),
            sig6(self.test_acc),
            sig6(self.wall_seconds)
        )
    }
}

/// Fixed six-significant-digit decimal rendering.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.5}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricRow>,
    pub model: Mlp,
}

/// Comment line plus header that open every metrics CSV.
pub fn csv_preamble(config: &TrainConfig) -> String {
    format!("# {}\n{CSV_HEADER}\n", config.describe())
}

pub fn render_csv(config: &TrainConfig, rows: &[MetricRow]) -> String {
    let mut s = csv_preamble(config);
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv_line());
    }
    s
}

/// Appends rows to a metrics CSV as epochs finish.
pub struct CsvSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvSink {
    pub fn create(path: &Path, config: &TrainConfig) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| BenchError::io(path, e))?;
        let mut sink = CsvSink { path: path.to_path_buf(), out: BufWriter::new(file) };
        sink.write(&csv_preamble(config))?;
        Ok(sink)
    }

    pub fn push(&mut self, row: &MetricRow) -> Result<()> {
        self.write(&format!("{}\n", row.to_csv_line()))
    }

    fn write(&mut self, s: &str) -> Result<()> {
        self.out
            .write_all(s.as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| BenchError::io(&self.path, e))
    }
}

/// Test accuracy of `model` in evaluation mode.
pub fn evaluate(model: &Mlp, data: &Dataset, batch_size: usize) -> Result<f64> {
    evaluate_with(data, batch_size, |x| model.forward_eval(x))
}

pub fn evaluate_graph(graph: &EvalGraph, data: &Dataset, batch_size: usize) -> Result<f64> {
    evaluate_with(data, batch_size, |x| graph.forward(x))
}

fn evaluate_with(
    data: &Dataset,
    batch_size: usize,
    mut forward: impl FnMut(&ebn::Tensor4) -> Result<ebn::Tensor4>,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(BenchError::Config("test batch size must be at least 1".into()));
    }
    let mut correct = 0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch_size).min(data.len());
        let x = data.images.slice_batch(start, end)?;
        let logits = forward(&x)?;
        correct += count_correct(&logits, &data.labels[start..end]);
        start = end;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Evaluation-mode logits over a whole split, batch by batch.
pub fn predict_logits(graph: &EvalGraph, data: &Dataset, batch_size: usize) -> Result<Vec<ebn::Tensor4>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch_size).min(data.len());
        out.push(graph.forward(&data.images.slice_batch(start, end)?)?);
        start = end;
    }
    Ok(out)
}

/// Applies `train_limit` / `test_limit`.
pub fn limited(config: &TrainConfig, data: &Mnist) -> Result<(Dataset, Dataset)> {
    let train = match config.train_limit {
        Some(n) => data.train.truncated(n)?,
        None => data.train.clone(),
    };
    let test = match config.test_limit {
        Some(n) => data.test.truncated(n)?,
        None => data.test.clone(),
    };
    Ok((train, test))
}

/// Initialization and shuffling draw from separate streams of the seed.
pub fn seeded_rngs(seed: u64) -> (ChaCha8Rng, u64) {
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    init.set_stream(1);
    (init, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED)
}

/// Trains for `config.epochs` epochs. After every epoch the whole test split
/// is evaluated and `on_epoch` sees the new metrics row.
pub fn run_training(
    config: &TrainConfig,
    data: &Mnist,
    on_epoch: &mut dyn FnMut(&MetricRow) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train, test) = limited(config, data)?;
    let (mut init_rng, shuffle_seed) = seeded_rngs(config.seed);
    let mut model = build_model(config.model_config()?, &mut init_rng)?;
    let mut velocity = model.zero_velocity();
    let opt = SgdMomentum {
        lr: config.effective_lr(),
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    };
    let mut batches = BatchIterator::new(train.len(), config.batch_size, shuffle_seed, false)?;
    info!("{} (train {}, test {})", config.describe(), train.len(), test.len());

    let mut rows = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, indices) in batches.next_epoch().iter().enumerate() {
            let (x, labels) = train.batch(indices)?;
            let out = model.train_step(x, &labels, &opt, &mut velocity).map_err(|e| match e {
                BenchError::Numerical(msg) | BenchError::Core(ebn::Error::NonFinite(msg)) => {
                    BenchError::Numerical(format!("{msg} at epoch {epoch}, batch {b}"))
                }
                other => other,
            })?;
            loss_sum += out.loss * labels.len() as f64;
            correct += out.correct;
        }
        let test_acc = evaluate(&model, &test, config.test_batch_size)?;
        let row = MetricRow {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch:>3}: loss {:.4} train {:.4} test {:.4} ({:.1}s)",
            row.train_loss, row.train_acc, row.test_acc, row.wall_seconds
        );
        on_epoch(&row)?;
        rows.push(row);
    }
    if config.epochs == 0 {
        warn!("zero epochs requested; returning the untrained model");
    }
    Ok(TrainOutcome { rows, model })
}
