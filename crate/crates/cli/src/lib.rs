//! The `qaware` command line: degrade images, inspect the degradation space,
//! pretrain, probe, fine-tune, run ablations and render reports.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{BenchConfig, RunConfig, CONFIG_ENV};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERIC,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<qaware::Error> for CliError {
    fn from(e: qaware::Error) -> Self {
        use qaware::Error as E;
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            E::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qaware", version, about = "Quality-aware contrastive pretraining for blind IQA")]
pub struct Cli {
    /// Run configuration (TOML). Falls back to $QAWARE_CONFIG, then defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training / sampling seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "qaware-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Negatives,
    Strategy,
    Grid,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply sampled degradation compositions to every image of a directory.
    Degrade {
        /// Directory of PNG/PPM sources.
        #[arg(long)]
        input: PathBuf,
        /// Degraded variants per source image.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Regenerate the outputs of an existing manifest instead of sampling.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Size of the discrete composition space.
    CountSpace {
        #[arg(long, default_value_t = 9)]
        num_ops: u32,
        #[arg(long, default_value_t = 2)]
        max_order: u32,
    },
    /// Write the synthetic labeled benchmark (images + manifest.tsv).
    GenBench {
        #[arg(long)]
        n_base: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Write the synthetic pretraining corpus.
    GenCorpus {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Quality-aware contrastive pretraining.
    Pretrain {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Linear probe of a checkpoint (random initialization without one).
    Probe {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// End-to-end fine-tuning of a checkpoint (random initialization without one).
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Pretrain and probe ablation variants.
    Ablate {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Summaries and plots for a run directory.
    Report {
        /// Run directory to read.
        #[arg(long)]
        run: PathBuf,
    },
}

/// Resolves the config file and applies flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    match &cli.command {
        Command::GenBench { n_base, levels } => {
            if let Some(n) = n_base {
                cfg.bench.n_base = *n;
            }
            if let Some(l) = levels {
                cfg.bench.levels = *l;
            }
        }
        Command::GenCorpus { count, size } => {
            if let Some(c) = count {
                cfg.train.corpus.count = *c;
            }
            if let Some(s) = size {
                cfg.train.corpus.size = *s;
            }
        }
        Command::Pretrain { epochs: Some(e) } => {
            cfg.train.epochs = *e;
            cfg.train.lr_decay_epochs.retain(|&d| d < *e);
        }
        Command::Finetune { epochs: Some(e), .. } => cfg.finetune.epochs = *e,
        _ => {}
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_path();
    let run = || match &cli.command {
        Command::Degrade { input, count, replay } => commands::degrade(&cfg, input, *count, replay.as_deref(), out),
        Command::CountSpace { num_ops, max_order } => commands::count_space_text(*num_ops, *max_order),
        Command::GenBench { .. } => commands::gen_bench(&cfg, out),
        Command::GenCorpus { .. } => commands::gen_corpus(&cfg, out),
        Command::Pretrain { .. } => commands::pretrain(&cfg, out),
        Command::Probe { checkpoint } => commands::probe(&cfg, checkpoint.as_deref(), out),
        Command::Finetune { checkpoint, .. } => commands::finetune(&cfg, checkpoint.as_deref(), out),
        Command::Ablate { suite } => commands::ablate(&cfg, *suite, out),
        Command::Report { run } => commands::report(run, out),
    };
    match cli.workers {
        Some(0) => Err(CliError::Usage("--workers must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
