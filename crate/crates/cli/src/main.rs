mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use fracsig::classify::{LogisticConfig, TrainConfig};
use fracsig::fracdyn::{CouplingOptions, UnknownInputOptions};
use fracsig::mfdfa::DEFAULT_Q_GRID;
use fracsig::signal::CohortSpec;
use fracsig::viral::{ViralCohortSpec, WindowSpec};

/// Fractional-dynamics signatures of multichannel time series.
#[derive(Debug, Parser)]
#[command(name = "fracsig", version, args_override_self = true)]
pub struct Cli {
    /// Key-value file with flag defaults (`key = value` per line).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic records.
    #[command(subcommand)]
    Synth(Synth),
    /// Multifractal spectrum of every channel of a record.
    Mfdfa(MfdfaArgs),
    /// Fractional orders and coupling matrix of one record.
    Coupling(CouplingArgs),
    /// Coupling features of every record in a manifest, as JSON lines.
    Extract(ExtractArgs),
    /// Train and evaluate classifiers over k-fold or institution splits.
    Train(TrainArgs),
    /// Evaluate a saved model on a feature file.
    Eval(EvalArgs),
    /// Distance between coupling estimates of successive record prefixes.
    Convergence(ConvergenceArgs),
    /// Early-detection errors of a viral cohort against inoculation shifts.
    Viral(ViralArgs),
}

#[derive(Debug, Subcommand)]
pub enum Synth {
    /// Fractional Gaussian noise.
    Fgn {
        #[arg(long)]
        hurst: f64,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: SynthCommon,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian white noise.
    White {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: SynthCommon,
        #[arg(long)]
        out: PathBuf,
    },
    /// Binomial multiplicative cascade of length 2^depth.
    Cascade {
        #[arg(long, default_value_t = 0.75)]
        p: f64,
        #[arg(long, default_value_t = 14)]
        depth: u32,
        #[command(flatten)]
        common: SynthCommon,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random stable fractional system; writes the record and its true model.
    System(SystemArgs),
    /// Labeled multi-class cohort with a record manifest.
    Cohort(CohortArgs),
    /// Viral-challenge cohort with its manifest.
    Viral(ViralCohortArgs),
}

#[derive(Debug, Args)]
pub struct SynthCommon {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampling rate written into the record, in Hz.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    #[arg(long, default_value_t = 12)]
    pub channels: usize,
    #[arg(long, default_value_t = 10_000)]
    pub length: usize,
    #[arg(long, default_value_t = CouplingOptions::default().horizon)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    /// Input channels, each driving one state through `B = [e_0 .. e_p-1]`.
    #[arg(long, default_value_t = 0)]
    pub inputs: usize,
    /// Rectangular bursts per input channel.
    #[arg(long, default_value_t = 5)]
    pub bursts: usize,
    #[arg(long, default_value_t = 50)]
    pub burst_duration: usize,
    #[arg(long, default_value_t = 5.0)]
    pub burst_amplitude: f64,
    #[command(flatten)]
    pub common: SynthCommon,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    #[arg(long, default_value_t = CohortSpec::default().classes)]
    pub classes: usize,
    #[arg(long, default_value_t = CohortSpec::default().per_class)]
    pub per_class: usize,
    #[arg(long, default_value_t = CohortSpec::default().channels)]
    pub channels: usize,
    #[arg(long, default_value_t = CohortSpec::default().length)]
    pub length: usize,
    #[arg(long, default_value_t = CohortSpec::default().institutions)]
    pub institutions: usize,
    #[arg(long, default_value_t = CohortSpec::default().horizon)]
    pub horizon: usize,
    #[command(flatten)]
    pub common: SynthCommon,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ViralCohortArgs {
    #[arg(long, default_value_t = ViralCohortSpec::default().subjects)]
    pub subjects: usize,
    #[arg(long, default_value_t = ViralCohortSpec::default().infected)]
    pub infected: usize,
    #[arg(long, default_value_t = ViralCohortSpec::default().channels)]
    pub channels: usize,
    #[arg(long, default_value_t = ViralCohortSpec::default().baseline_len)]
    pub baseline_len: usize,
    #[arg(long, default_value_t = ViralCohortSpec::default().response_len)]
    pub response_len: usize,
    #[arg(long, default_value_t = ViralCohortSpec::default().recovery_len)]
    pub recovery_len: usize,
    #[command(flatten)]
    pub common: SynthCommon,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QZero {
    Exclude,
    LogAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Windows {
    Forward,
    BothEnds,
}

#[derive(Debug, Args)]
pub struct MfdfaArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Comma-separated moments.
    #[arg(long, value_delimiter = ',', num_args = 1, action = ArgAction::Set, allow_hyphen_values = true,
          default_values_t = DEFAULT_Q_GRID.to_vec())]
    pub q: Vec<f64>,
    /// Comma-separated scales; defaults to a log-spaced grid in [16, N/4].
    #[arg(long, value_delimiter = ',', num_args = 1, action = ArgAction::Set, conflicts_with = "dyadic")]
    pub scales: Option<Vec<usize>>,
    /// Use the powers of two in [16, N/4] as scales.
    #[arg(long)]
    pub dyadic: bool,
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, value_enum, default_value_t = QZero::Exclude)]
    pub q_zero: QZero,
    #[arg(long, value_enum, default_value_t = Windows::Forward)]
    pub windows: Windows,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CouplingFlags {
    #[arg(long, default_value_t = CouplingOptions::default().horizon)]
    pub horizon: usize,
    #[arg(long, default_value_t = CouplingOptions::default().ridge)]
    pub ridge: f64,
    /// Fit raw channel values instead of centred ones.
    #[arg(long)]
    pub no_center: bool,
    /// Fit without scaling channels to unit variance.
    #[arg(long)]
    pub no_normalize: bool,
}

impl CouplingFlags {
    pub fn options(&self) -> CouplingOptions {
        CouplingOptions {
            horizon: self.horizon,
            ridge: self.ridge,
            center: !self.no_center,
            normalize: !self.no_normalize,
        }
    }
}

#[derive(Debug, Args)]
pub struct CouplingArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Comma-separated orders; estimated from the data when absent.
    #[arg(long, value_delimiter = ',', num_args = 1, action = ArgAction::Set, allow_hyphen_values = true)]
    pub alpha: Option<Vec<f64>>,
    #[command(flatten)]
    pub coupling: CouplingFlags,
    /// Unknown input channels estimated jointly with the coupling.
    #[arg(long, default_value_t = 0)]
    pub unknown_inputs: usize,
    #[arg(long, default_value_t = UnknownInputOptions::default().max_iter)]
    pub max_iter: usize,
    #[arg(long, default_value_t = UnknownInputOptions::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = UnknownInputOptions::default().threshold_sigmas)]
    pub threshold_sigmas: f64,
    /// Coupling JSON `{n, alpha, A}`.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON with the input matrix, iteration history and orders.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[command(flatten)]
    pub coupling: CouplingFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Kfold,
    Holdout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Mlp,
    Logistic,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Kfold)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = Model::Mlp)]
    pub model: Model,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Keep every subject's cases inside one fold.
    #[arg(long)]
    pub group_by_subject: bool,
    /// Hold out only this institution; all of them in turn when absent.
    #[arg(long)]
    pub institution: Option<String>,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().rmsprop_decay)]
    pub rmsprop_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().epsilon)]
    pub epsilon: f64,
    #[arg(long, default_value_t = TrainConfig::default().dropout)]
    pub dropout: f64,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',', num_args = 1, action = ArgAction::Set,
          default_values_t = TrainConfig::default().hidden)]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = LogisticConfig::default().l2)]
    pub l2: f64,
    #[arg(long, default_value_t = LogisticConfig::default().epochs)]
    pub logistic_epochs: usize,
    #[arg(long, default_value_t = LogisticConfig::default().learning_rate)]
    pub logistic_learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the trained model of every split.
    #[arg(long)]
    pub save_models: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Prefix growth per point, in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub step_seconds: f64,
    /// Comma-separated orders; estimated from the whole record when absent.
    #[arg(long, value_delimiter = ',', num_args = 1, action = ArgAction::Set, allow_hyphen_values = true)]
    pub alpha: Option<Vec<f64>>,
    #[command(flatten)]
    pub coupling: CouplingFlags,
    /// Distance below which the estimate counts as settled.
    #[arg(long, default_value_t = 0.02)]
    pub threshold: f64,
    /// Curve CSV with columns `seconds,distance`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ViralArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = WindowSpec::default().window_len)]
    pub window: usize,
    #[arg(long, default_value_t = WindowSpec::default().stride)]
    pub stride: usize,
    /// Samples compared on each side of the split; all of them when absent.
    #[arg(long)]
    pub side_len: Option<usize>,
    /// KDE bandwidth; Silverman's rule when absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Distance between successive shifts, in samples.
    #[arg(long, default_value_t = 400)]
    pub shift_step: usize,
    /// Shifts on each side of zero.
    #[arg(long, default_value_t = 5)]
    pub shift_count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Exit status for a failed run.
pub enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

fn parse(argv: Vec<OsString>) -> Result<Cli, Failure> {
    let clap_fail = |e: clap::Error| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            std::process::exit(0)
        }
        _ => Failure::Usage(e.render().to_string()),
    };
    let Some(path) = config::config_path(&argv) else {
        return Cli::try_parse_from(&argv).map_err(clap_fail);
    };
    let root = Cli::command();
    let (chain, at) = config::chain(&root, &argv);
    let entries = config::load(path.as_ref()).map_err(|e| Failure::Usage(format!("{e:#}")))?;
    let extra = config::tokens(&root, &chain, &entries).map_err(|e| Failure::Usage(format!("{e:#}")))?;
    Cli::try_parse_from(config::splice(&argv, at, extra)).map_err(clap_fail)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .find_map(|e| e.downcast_ref::<fracsig::Error>())
        .is_some_and(fracsig::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let result = parse(std::env::args_os().collect()).and_then(|cli| {
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::Usage(e.to_string()))?;
        }
        commands::run(cli.command).map_err(Failure::Run)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
