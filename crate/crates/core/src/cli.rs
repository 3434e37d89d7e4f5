//! Experiment runners and the argument parser behind the `slstm` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence,
//! 4 failed check.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::cells::{param_count, CellParams, Variant};
use crate::error::{Error, Result};
use crate::gradcheck::{sweep, CellReport, SweepConfig};
use crate::mnist::{subsample, MnistFiles, SequenceDataset, NUM_CLASSES, SIDE};
use crate::numkit::ActivationKind;
use crate::params::ParamSet;
use crate::trainer::{format_sig, AccuracyDrop, MetricsLog, TrainConfig, Trainer};

pub const DATA_DIR_ENV: &str = "SLSTM_DATA_DIR";

/// Test-accuracy drop (absolute fraction) below the running best that gets
/// flagged in the training report.
pub const DROP_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Usage = 1,
    Data = 2,
    Divergence = 3,
    CheckFailed = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn for_error(err: &Error) -> Self {
        match err {
            Error::Config(_) => Self::Usage,
            Error::NumericOverflow(_) => Self::Divergence,
            Error::Dimension { .. }
            | Error::Format { .. }
            | Error::Length { .. }
            | Error::Data(_)
            | Error::Snapshot(_)
            | Error::Io(_) => Self::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    ParamTable,
    GradCheck,
    Bench,
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub mode: Mode,
    pub config: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// 0 means the full split.
    pub train_n: usize,
    pub test_n: usize,
    pub no_clobber: bool,
    /// Write measured epoch times into the CSV; when off the `seconds` column
    /// is zero and reruns are byte-identical.
    pub record_time: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            mode: Mode::Train,
            config: TrainConfig::default(),
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            train_n: 0,
            test_n: 0,
            no_clobber: false,
            record_time: true,
        }
    }
}

impl RunSpec {
    /// `--data-dir`, else `$SLSTM_DATA_DIR`.
    pub fn resolve_data_dir(&self) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                Error::Config(format!(
                    "no data directory: pass --data-dir or set {DATA_DIR_ENV}"
                ))
            })
    }

    pub fn csv_name(&self) -> String {
        format!(
            "{}_{}_{}.csv",
            self.config.variant.name().to_lowercase(),
            self.config.activation.name(),
            format_sig(self.config.learning_rate, 6)
        )
    }
}

/// Loads both MNIST splits and applies the stratified subsets.
pub fn load_datasets(
    data_dir: &Path,
    train_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<(SequenceDataset, SequenceDataset)> {
    let files = MnistFiles::in_dir(data_dir);
    let shrink = |ds: SequenceDataset, n: usize| -> Result<SequenceDataset> {
        if n == 0 || n == ds.len() {
            Ok(ds)
        } else {
            subsample(&ds, n, seed)
        }
    };
    let train = shrink(files.load_train()?, train_n)?;
    let test = shrink(files.load_test()?, test_n)?;
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: MetricsLog,
    pub csv_path: PathBuf,
    pub drops: Vec<AccuracyDrop>,
}

pub fn run_train(spec: &RunSpec, out: &mut dyn Write) -> Result<TrainOutcome> {
    spec.config.validate()?;
    let csv_path = spec.out_dir.join(spec.csv_name());
    if spec.no_clobber && csv_path.exists() {
        return Err(Error::Config(format!(
            "{} exists and --no-clobber was given",
            csv_path.display()
        )));
    }
    let data_dir = spec.resolve_data_dir()?;
    let (train, test) = load_datasets(&data_dir, spec.train_n, spec.test_n, spec.config.seed)?;
    let cfg = &spec.config;
    writeln!(
        out,
        "{} / {} / eta {} : {} train, {} test, hidden {}, batch {}, {} epochs, {} parameters",
        cfg.variant,
        cfg.activation,
        format_sig(cfg.learning_rate, 6),
        train.len(),
        test.len(),
        cfg.hidden_dim,
        cfg.batch_size,
        cfg.epochs,
        param_count(cfg.variant, SIDE, cfg.hidden_dim, NUM_CLASSES)
    )?;

    let mut trainer = Trainer::new(cfg.clone(), train.width(), NUM_CLASSES)?;
    let log = trainer.fit(&train, &test, |r| {
        let _ = writeln!(
            out,
            "epoch {:>3}  train loss {:.4} acc {:.4}  test loss {:.4} acc {:.4}  ({:.1}s)",
            r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.seconds
        );
    })?;

    std::fs::create_dir_all(&spec.out_dir)?;
    log.write_csv(&csv_path, spec.record_time)?;

    let drops = log.accuracy_drops(DROP_THRESHOLD);
    if let (Some(last), Some((best_epoch, best))) =
        (log.final_test_accuracy(), log.best_test_accuracy())
    {
        writeln!(out, "final test accuracy {last:.4}")?;
        writeln!(out, "best test accuracy {best:.4} (epoch {best_epoch})")?;
    }
    for d in &drops {
        writeln!(
            out,
            "flag: epoch {} test accuracy {:.4} is {:.1} points below the running best {:.4}",
            d.epoch,
            d.test_acc,
            100.0 * (d.running_max - d.test_acc),
            d.running_max
        )?;
    }
    writeln!(out, "metrics written to {}", csv_path.display())?;
    Ok(TrainOutcome {
        log,
        csv_path,
        drops,
    })
}

/// Parameter counts of all six variants for the given dimensions, printed one
/// per line as `NAME COUNT`.
pub fn run_param_table(
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    out: &mut dyn Write,
) -> Result<Vec<(Variant, usize)>> {
    if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
        return Err(Error::Config("dimensions must be positive".into()));
    }
    let rows: Vec<(Variant, usize)> = Variant::ALL
        .iter()
        .map(|&v| (v, param_count(v, input_dim, hidden_dim, output_dim)))
        .collect();
    for (v, n) in &rows {
        writeln!(out, "{} {}", v.name(), n)?;
    }
    Ok(rows)
}

/// Number of scalars allocated by an actual cell plus a dense head, for
/// cross-checking [`param_count`].
pub fn structural_param_count(
    variant: Variant,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
) -> usize {
    CellParams::zeros(variant, input_dim, hidden_dim).scalar_count()
        + hidden_dim * output_dim
        + output_dim
}

pub fn run_grad_check(cfg: &SweepConfig, out: &mut dyn Write) -> Result<(bool, Vec<CellReport>)> {
    let reports = sweep(cfg)?;
    writeln!(
        out,
        "{:<6} {:<8} {:>7} {:>7} {:>12}  status",
        "cell", "act", "checked", "skipped", "worst rel"
    )?;
    for r in &reports {
        writeln!(
            out,
            "{:<6} {:<8} {:>7} {:>7} {:>12.3e}  {}",
            r.variant.name(),
            r.activation.name(),
            r.checked,
            r.skipped,
            r.worst_error,
            if r.passed {
                "ok".to_string()
            } else {
                format!("FAIL at {}", r.worst_at)
            }
        )?;
    }
    let ok = reports.iter().all(|r| r.passed);
    writeln!(
        out,
        "{} (tolerance {:e}, epsilon {:e})",
        if ok {
            "all gradients agree"
        } else {
            "gradient check FAILED"
        },
        cfg.tolerance,
        cfg.epsilon
    )?;
    Ok((ok, reports))
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    /// Median epoch seconds per variant, in [`Variant::ALL`] order.
    pub seconds: Vec<(Variant, f64)>,
    pub lstm3_faster: bool,
    /// Variants slower than 1.2× the full LSTM.
    pub outside_band: Vec<Variant>,
}

impl BenchReport {
    pub fn time_of(&self, v: Variant) -> f64 {
        self.seconds
            .iter()
            .find(|(x, _)| *x == v)
            .map(|(_, s)| *s)
            .unwrap_or(f64::NAN)
    }

    /// Variants from fastest to slowest.
    pub fn ordering(&self) -> Vec<Variant> {
        let mut s = self.seconds.clone();
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
        s.into_iter().map(|(v, _)| v).collect()
    }
}

/// Times one training epoch per variant on the same data and seed, taking the
/// median of `repeats` runs.
pub fn bench_on(
    train: &SequenceDataset,
    config: &TrainConfig,
    repeats: usize,
    out: &mut dyn Write,
) -> Result<BenchReport> {
    let repeats = repeats.max(1);
    let mut seconds = Vec::new();
    for v in Variant::ALL {
        let cfg = TrainConfig {
            variant: v,
            epochs: 1,
            ..config.clone()
        };
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let mut trainer = Trainer::new(cfg.clone(), train.width(), NUM_CLASSES)?;
            let start = Instant::now();
            trainer.train_epoch(train, 1)?;
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2];
        writeln!(
            out,
            "{:<6} {:>8} params  {:>9.3} s/epoch",
            v.name(),
            param_count(v, train.width(), cfg.hidden_dim, NUM_CLASSES),
            median
        )?;
        seconds.push((v, median));
    }
    let mut report = BenchReport {
        seconds,
        lstm3_faster: false,
        outside_band: Vec::new(),
    };
    let base = report.time_of(Variant::Lstm);
    report.lstm3_faster = report.time_of(Variant::Lstm3) < base;
    report.outside_band = Variant::ALL[1..]
        .iter()
        .copied()
        .filter(|&v| report.time_of(v) > 1.2 * base)
        .collect();
    let order: Vec<&str> = report.ordering().iter().map(|v| v.name()).collect();
    writeln!(out, "fastest to slowest: {}", order.join(" < "))?;
    writeln!(
        out,
        "LSTM3 {} LSTM ({:.3} s vs {:.3} s)",
        if report.lstm3_faster {
            "faster than"
        } else {
            "NOT faster than"
        },
        report.time_of(Variant::Lstm3),
        base
    )?;
    for v in &report.outside_band {
        writeln!(out, "note: {v} is slower than 1.2x LSTM")?;
    }
    Ok(report)
}

pub fn run_bench(spec: &RunSpec, repeats: usize, out: &mut dyn Write) -> Result<BenchReport> {
    spec.config.validate()?;
    let data_dir = spec.resolve_data_dir()?;
    let (train, _) = load_datasets(&data_dir, spec.train_n, 0, spec.config.seed)?;
    writeln!(
        out,
        "one epoch over {} sequences, hidden {}, batch {}, median of {}",
        train.len(),
        spec.config.hidden_dim,
        spec.config.batch_size,
        repeats.max(1)
    )?;
    bench_on(&train, &spec.config, repeats, out)
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_activation(s: &str) -> std::result::Result<ActivationKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fault(s: &str) -> std::result::Result<(Variant, ActivationKind), String> {
    let (v, a) = s
        .split_once(':')
        .ok_or_else(|| format!("expected VARIANT:ACTIVATION, got `{s}`"))?;
    Ok((parse_variant(v)?, parse_activation(a)?))
}

#[derive(Debug, Parser)]
#[command(
    name = "slstm",
    version,
    about = "Train and check the LSTM gate-reduced variants"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant on row-sequential MNIST and write per-epoch metrics.
    Train(TrainArgs),
    /// Print parameter counts of all variants.
    ParamTable(ParamTableArgs),
    /// Compare analytic gradients with central differences.
    GradCheck(GradCheckArgs),
    /// Time one training epoch per variant.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "lstm", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value = "tanh", value_parser = parse_activation)]
    pub activation: ActivationKind,
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stratified training subset size, 0 for all 60000.
    #[arg(long, default_value_t = 0)]
    pub train_n: usize,
    /// Stratified test subset size, 0 for all 10000.
    #[arg(long, default_value_t = 0)]
    pub test_n: usize,
    /// Directory with the four MNIST IDX files (falls back to $SLSTM_DATA_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Refuse to overwrite an existing metrics file.
    #[arg(long)]
    pub no_clobber: bool,
    /// Write 0 in the seconds column so reruns produce identical files.
    #[arg(long)]
    pub no_timing: bool,
}

impl TrainArgs {
    pub fn to_spec(&self) -> RunSpec {
        RunSpec {
            mode: Mode::Train,
            config: TrainConfig {
                variant: self.variant,
                activation: self.activation,
                learning_rate: self.eta,
                batch_size: self.batch,
                epochs: self.epochs,
                seed: self.seed,
                hidden_dim: self.hidden,
                threads: self.threads,
                ..TrainConfig::default()
            },
            data_dir: self.data_dir.clone(),
            out_dir: self.out_dir.clone(),
            train_n: self.train_n,
            test_n: self.test_n,
            no_clobber: self.no_clobber,
            record_time: !self.no_timing,
        }
    }
}

#[derive(Debug, Args)]
pub struct ParamTableArgs {
    #[arg(long, default_value_t = 28)]
    pub input: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 10)]
    pub output: usize,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Instances per variant and activation.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Corrupt the analytic gradient of one VARIANT:ACTIVATION pair.
    #[arg(long, hide = true, value_parser = parse_fault)]
    pub inject_fault: Option<(Variant, ActivationKind)>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "tanh", value_parser = parse_activation)]
    pub activation: ActivationKind,
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub train_n: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl BenchArgs {
    pub fn to_spec(&self) -> RunSpec {
        RunSpec {
            mode: Mode::Bench,
            config: TrainConfig {
                activation: self.activation,
                learning_rate: self.eta,
                batch_size: self.batch,
                epochs: 1,
                seed: self.seed,
                hidden_dim: self.hidden,
                threads: self.threads,
                ..TrainConfig::default()
            },
            data_dir: self.data_dir.clone(),
            train_n: self.train_n,
            ..RunSpec::default()
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitStatus::Success.code(),
                _ => ExitStatus::Usage.code(),
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(&a.to_spec(), out).map(|_| ExitStatus::Success),
        Command::ParamTable(a) => {
            run_param_table(a.input, a.hidden, a.output, out).map(|_| ExitStatus::Success)
        }
        Command::GradCheck(a) => {
            let cfg = SweepConfig {
                instances: a.instances,
                seed: a.seed,
                epsilon: a.epsilon,
                tolerance: a.tolerance,
                fault: a.inject_fault,
                ..SweepConfig::default()
            };
            run_grad_check(&cfg, out).map(|(ok, _)| {
                if ok {
                    ExitStatus::Success
                } else {
                    ExitStatus::CheckFailed
                }
            })
        }
        Command::Bench(a) => run_bench(&a.to_spec(), a.repeats, out).map(|r| {
            if r.lstm3_faster {
                ExitStatus::Success
            } else {
                ExitStatus::CheckFailed
            }
        }),
    };
    match result {
        Ok(status) => status.code(),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            ExitStatus::for_error(&e).code()
        }
    }
}
