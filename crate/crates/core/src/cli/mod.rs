//! Command-line front end: argument parsing, configuration, persistence and
//! the train / predict / report commands.

pub mod commands;
pub mod config;
pub mod persist;
pub mod trace;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::coarsening::PointAggregation;
use crate::data_io::{CsvOptions, DataFormat};
use crate::error::{Error, Result};
use commands::{cmd_predict, cmd_report, cmd_train, DumpOptions};
use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "amlsvm", version, about = "Multilevel weighted SVM for imbalanced binary data")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// k-fold training and evaluation.
    Train(TrainArgs),
    /// Score a dataset with a saved model.
    Predict(PredictArgs),
    /// Per-level quality table from run traces.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CsvArgs {
    /// CSV files start with a header row.
    #[arg(long)]
    pub header: bool,
    /// CSV label column; negative values count from the end.
    #[arg(long, allow_hyphen_values = true)]
    pub label_column: Option<i64>,
    /// CSV file has no label column.
    #[arg(long, conflicts_with = "label_column")]
    pub no_labels: bool,
}

impl CsvArgs {
    fn options(&self) -> Option<CsvOptions> {
        if !self.header && self.label_column.is_none() && !self.no_labels {
            return None;
        }
        Some(CsvOptions {
            has_header: self.header,
            label_column: if self.no_labels { None } else { Some(self.label_column.unwrap_or(-1)) },
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    /// Start from a saved configuration; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long)]
    pub kfold: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Neighbors per point in the proximity graphs.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Class size at which coarsening stops (M).
    #[arg(long)]
    pub coarsest_size: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub q_seed: Option<f64>,
    /// Seed neighbors kept per interpolation row (r).
    #[arg(long)]
    pub interp_order: Option<usize>,
    #[arg(long, value_enum)]
    pub aggregation: Option<PointAggregation>,
    /// Training-set size that stops refinement [default: 10 × coarsest size].
    #[arg(long)]
    pub theta: Option<usize>,
    /// G-mean drop that triggers recovery.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Positive neighbors added per misclassified validation point.
    #[arg(long)]
    pub p: Option<usize>,
    /// Negative neighbors added per misclassified validation point.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub val_min_ratio: Option<f64>,
    #[arg(long)]
    pub val_maj_ratio: Option<f64>,
    /// `lo,hi` in log2 units.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
    pub log2c_range: Option<(f64, f64)>,
    /// `lo,hi` in log2 units.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
    pub log2g_range: Option<(f64, f64)>,
    #[arg(long)]
    pub nud_stage1: Option<usize>,
    #[arg(long)]
    pub nud_stage2: Option<usize>,
    #[arg(long)]
    pub no_recovery: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "amlsvm-out")]
    pub out_dir: PathBuf,
    /// Write per-level hierarchy sizes and volumes.
    #[arg(long)]
    pub dump_hierarchy: bool,
    /// Write the finest proximity graphs as edge lists.
    #[arg(long)]
    pub dump_graphs: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub model: PathBuf,
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    #[command(flatten)]
    pub csv: CsvArgs,
    /// Predictions CSV (label, decision value).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Per-fold rows (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mean/min/max per level.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .or_else(|| s.split_once(':'))
        .ok_or_else(|| format!("expected lo,hi but got {s:?}"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((lo, hi))
}

impl TrainArgs {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Malformed {
                    path: p.clone(),
                    message: e.to_string(),
                })?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $v:expr) => {
                if let Some(v) = $v {
                    $field = v;
                }
            };
        }
        set!(cfg.format, self.format);
        set!(cfg.csv, self.csv.options());
        set!(cfg.kfold, self.kfold);
        set!(cfg.seed, self.seed);
        set!(cfg.knn, self.knn);
        if let Some(m) = self.coarsest_size {
            cfg.coarsening.coarsest_size = m;
            if self.theta.is_none() {
                cfg.refinement.theta = 10 * m;
            }
        }
        set!(cfg.coarsening.eta, self.eta);
        set!(cfg.coarsening.q_seed, self.q_seed);
        set!(cfg.coarsening.interp_order, self.interp_order);
        set!(cfg.coarsening.aggregation, self.aggregation);
        set!(cfg.refinement.theta, self.theta);
        set!(cfg.refinement.delta, self.delta);
        set!(cfg.refinement.p, self.p);
        set!(cfg.refinement.n, self.n);
        set!(cfg.val_min_ratio, self.val_min_ratio);
        set!(cfg.val_maj_ratio, self.val_maj_ratio);
        set!(cfg.nud.log2c_range, self.log2c_range);
        set!(cfg.nud.log2g_range, self.log2g_range);
        set!(cfg.nud.stage1_points, self.nud_stage1);
        set!(cfg.nud.stage2_points, self.nud_stage2);
        if self.no_recovery {
            cfg.refinement.recovery = false;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Training(_) => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.run_config()?;
            init_threads(cfg.threads);
            let dumps = DumpOptions {
                hierarchy: args.dump_hierarchy,
                graphs: args.dump_graphs,
            };
            let out = cmd_train(&args.dataset, &cfg, &args.out_dir, dumps)?;
            let m = &out.summary.mean;
            println!(
                "mean over {} folds: ACC {:.4} SN {:.4} SP {:.4} Gmean {:.4} ({:.1}s)",
                out.folds.len(),
                m.acc,
                m.sn,
                m.sp,
                m.gmean,
                out.timing.wall_seconds
            );
        }
        Command::Predict(args) => {
            let csv = args.csv.options();
            let out = cmd_predict(&args.model, &args.dataset, args.format, csv.as_ref(), args.out.as_deref())?;
            if args.out.is_none() {
                println!("label,decision_value");
                for p in &out.predictions {
                    println!("{},{}", p.label, p.decision_value);
                }
            }
            if let Some(q) = out.metrics {
                eprintln!("{}", serde_json::to_string(&serde_json::json!({ "metrics": q }))?);
            }
        }
        Command::Report(args) => {
            cmd_report(&args.traces, args.out.as_deref(), args.summary.as_deref())?;
        }
    }
    Ok(())
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
