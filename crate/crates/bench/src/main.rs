use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use ebn_bench::config::{normalize_key, read_key_values};
use ebn_bench::data::default_data_dir;
use ebn_bench::report::{read_metrics_csv, report_final, run_suite, SuiteMatrix};
use ebn_bench::train::{evaluate, evaluate_graph, predict_logits, run_training, CsvSink};
use ebn_bench::{load_mnist, BenchError, Result, TrainConfig};
use log::info;

/// Train the MNIST MLP under a chosen normalization layer, or run a grid of
/// such runs, and report the final-5-epoch test accuracy.
///
/// Exit codes: 0 success, 2 configuration error, 3 ingestion error,
/// 4 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "ebn-bench", version)]
struct Cli {
    /// Flat `key = value` file; flags given on the command line win.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// bn | ebn | gn | ln | in
    #[arg(long)]
    norm: Option<String>,
    /// Group count for gn.
    #[arg(long, value_name = "G")]
    groups: Option<String>,
    /// Centering of the pooled ebn variance: per-channel | global
    #[arg(long)]
    std_center: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// Base learning rate at batch size 128; scaled linearly with batch size.
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// SGD momentum.
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    /// Moving-average momentum of running statistics.
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    hidden_layers: Option<String>,
    #[arg(long)]
    hidden_units: Option<String>,
    #[arg(long)]
    test_batch_size: Option<String>,
    /// Use only the first N training examples.
    #[arg(long, value_name = "N")]
    train_limit: Option<String>,
    /// Use only the first N test examples.
    #[arg(long, value_name = "N")]
    test_limit: Option<String>,
    /// Directory with the four MNIST IDX files [default: $MNIST_DIR or data/mnist]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Metrics CSV for a single run, or the comparison table for --suite.
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
    /// After training, fold every norm layer into its linear layer and
    /// evaluate the fused model too.
    #[arg(long)]
    fuse: bool,
    /// Run the grid described by a matrix file.
    #[arg(long, value_name = "MATRIX")]
    suite: Option<PathBuf>,
    /// With --suite, reuse per-run CSVs that already hold every epoch.
    #[arg(long)]
    resume: bool,
    /// Summarize an existing metrics CSV and exit.
    #[arg(long, value_name = "CSV")]
    report: Option<PathBuf>,
}

impl Cli {
    fn flag_pairs(&self) -> Vec<(&'static str, &String)> {
        let flags = [
            ("norm", &self.norm),
            ("groups", &self.groups),
            ("std-center", &self.std_center),
            ("batch-size", &self.batch_size),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("momentum", &self.momentum),
            ("weight-decay", &self.weight_decay),
            ("rho", &self.rho),
            ("eps", &self.eps),
            ("seed", &self.seed),
            ("hidden-layers", &self.hidden_layers),
            ("hidden-units", &self.hidden_units),
            ("test-batch-size", &self.test_batch_size),
            ("train-limit", &self.train_limit),
            ("test-limit", &self.test_limit),
        ];
        flags.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

struct Settings {
    train: TrainConfig,
    data_dir: PathBuf,
    out: Option<PathBuf>,
    fuse: bool,
    suite: Option<PathBuf>,
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut s = Settings {
        train: TrainConfig::default(),
        data_dir: default_data_dir(),
        out: None,
        fuse: false,
        suite: None,
    };
    if let Some(path) = &cli.config {
        for (k, v) in read_key_values(path)? {
            match normalize_key(&k).as_str() {
                "data-dir" => s.data_dir = PathBuf::from(v),
                "out" => s.out = Some(PathBuf::from(v)),
                "suite" => s.suite = Some(PathBuf::from(v)),
                "fuse" => {
                    s.fuse = v
                        .parse()
                        .map_err(|_| BenchError::Config(format!("invalid value {v:?} for fuse")))?
                }
                _ => s.train.set(&k, &v)?,
            }
        }
    }
    for (k, v) in cli.flag_pairs() {
        s.train.set(k, v)?;
    }
    if let Some(d) = &cli.data_dir {
        s.data_dir = d.clone();
    }
    if cli.out.is_some() {
        s.out = cli.out.clone();
    }
    if cli.suite.is_some() {
        s.suite = cli.suite.clone();
    }
    s.fuse |= cli.fuse;
    Ok(s)
}

fn print_summary(rows: &[ebn_bench::MetricRow]) -> Result<()> {
    let summary = report_final(rows)?;
    println!(
        "final-5 mean test accuracy {:.4} (best {:.4} at epoch {})",
        summary.final_mean, summary.best_test_acc, summary.best_epoch
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(path) = &cli.report {
        return print_summary(&read_metrics_csv(path)?);
    }
    let s = settings(&cli)?;
    s.train.validate()?;
    let data = load_mnist(&s.data_dir)?;
    info!("loaded {} train / {} test images from {}", data.train.len(), data.test.len(), s.data_dir.display());

    if let Some(matrix_path) = &s.suite {
        let matrix = SuiteMatrix::from_file(s.train.clone(), matrix_path)?;
        let out = s.out.clone().unwrap_or_else(|| PathBuf::from("results/suite.csv"));
        let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let table = run_suite(&matrix, &data, out_dir, cli.resume);
        let csv = table.to_csv();
        fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
        fs::write(&out, &csv).map_err(|e| BenchError::io(&out, e))?;
        print!("{csv}");
        return Ok(());
    }

    let mut sink = s.out.as_deref().map(|p| CsvSink::create(p, &s.train)).transpose()?;
    println!("# {}", s.train.describe());
    let outcome = run_training(&s.train, &data, &mut |row| {
        println!("{}", row.to_csv_line());
        match sink.as_mut() {
            Some(sink) => sink.push(row),
            None => Ok(()),
        }
    })?;
    if outcome.rows.len() >= 5 {
        print_summary(&outcome.rows)?;
    }

    if s.fuse {
        let (_, test) = ebn_bench::train::limited(&s.train, &data)?;
        let graph = outcome.model.eval_graph();
        let fused = graph.fuse()?;
        let batch = s.train.test_batch_size;
        let unfused_acc = evaluate(&outcome.model, &test, batch)?;
        let fused_acc = evaluate_graph(&fused, &test, batch)?;
        let mut max_diff: f64 = 0.0;
        for (a, b) in predict_logits(&graph, &test, batch)?.iter().zip(predict_logits(&fused, &test, batch)?) {
            max_diff = max_diff.max(a.max_abs_diff(&b)?);
        }
        println!(
            "fused model: {} norm stages left, test accuracy {fused_acc:.4} (unfused {unfused_acc:.4}), max |logit diff| {max_diff:.3e}",
            fused.norm_count()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
