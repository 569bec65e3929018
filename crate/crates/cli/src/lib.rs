//! `dualmoco` command-line pipeline. [`run_command`] is the whole program;
//! the binary only forwards its arguments and exit code.

mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dualmoco::datagen::{Language, Split};
use dualmoco::eval::MarginVariant;
use dualmoco::PoolingMode;

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "dualmoco",
    version,
    about = "Cross-lingual sentence embeddings with dual momentum contrast"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic bilingual world (parallel, mining, STS, NLI).
    GenData(GenDataArgs),
    /// Train both encoders on the parallel training split.
    Train(TrainArgs),
    /// Encode both sides of a parallel split.
    Embed(EmbedArgs),
    /// Retrieval accuracy between two aligned embedding dumps.
    EvalRetrieval(EvalRetrievalArgs),
    /// Margin-based bitext mining with λ tuned on validation.
    Mine(MineArgs),
    /// Spearman correlation on the STS pairs.
    EvalSts(EvalStsArgs),
    /// Encode a token file (one sentence per line) for external tools.
    DumpEmbeddings(DumpArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Run config JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Threads for evaluation encoding.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    queue_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    temperature: Option<f64>,
    /// Keys come from the base encoders (momentum coefficient 0).
    #[arg(long)]
    no_momentum: bool,
    #[arg(long)]
    pooling: Option<PoolingMode>,
    /// Add the NLI multitask term (reads nli.tsv).
    #[arg(long)]
    nli: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    pooling: Option<PoolingMode>,
}

#[derive(Debug, Args)]
struct EvalRetrievalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding embeddings_a.dmce and embeddings_b.dmce.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    margin: Option<MarginVariant>,
    #[arg(long)]
    pooling: Option<PoolingMode>,
}

#[derive(Debug, Args)]
struct EvalStsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    pooling: Option<PoolingMode>,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Token file: one sentence per line, space-separated ids.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    language: Option<Language>,
    #[arg(long)]
    pooling: Option<PoolingMode>,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("DMC_LOG_LEVEL", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn resolve(common: &Common, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(t) = common.threads {
        config.eval.threads = t;
        config.train.eval_threads = t;
    }
    apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => {
            let config = resolve(&a.common, |c| {
                if let Some(s) = a.seed {
                    c.data.seed = s;
                }
            })?;
            commands::gen_data(&config, &a.common.out)
        }
        Command::Train(a) => {
            let config = resolve(&a.common, |c| {
                set(&mut c.paths.data_dir, a.data);
                if let Some(s) = a.seed {
                    c.train.seed = s;
                }
                if let Some(k) = a.queue_size {
                    c.train.queue_capacity = k;
                }
                if let Some(t) = a.temperature {
                    c.train.temperature = t;
                }
                if let Some(p) = a.pooling {
                    c.train.pooling = p;
                }
                if let Some(e) = a.epochs {
                    c.train.epochs = e;
                }
                c.train.ablation_no_momentum |= a.no_momentum;
                c.nli |= a.nli;
            })?;
            commands::train(&config, &a.common.out)
        }
        Command::Embed(a) => {
            let config = resolve(&a.common, |c| {
                set(&mut c.paths.checkpoint, a.checkpoint);
                set(&mut c.paths.data_dir, a.data);
                if let Some(s) = a.split {
                    c.eval.split = s;
                }
                if let Some(p) = a.pooling {
                    c.train.pooling = p;
                }
            })?;
            commands::embed(&config, &a.common.out)
        }
        Command::EvalRetrieval(a) => {
            let config = resolve(&a.common, |c| set(&mut c.paths.embeddings_dir, a.embeddings))?;
            commands::eval_retrieval(&config, &a.common.out)
        }
        Command::Mine(a) => {
            let config = resolve(&a.common, |c| {
                set(&mut c.paths.checkpoint, a.checkpoint);
                set(&mut c.paths.data_dir, a.data);
                if let Some(m) = a.margin {
                    c.eval.margin = m;
                }
                if let Some(p) = a.pooling {
                    c.train.pooling = p;
                }
            })?;
            commands::mine(&config, &a.common.out)
        }
        Command::EvalSts(a) => {
            let config = resolve(&a.common, |c| {
                set(&mut c.paths.checkpoint, a.checkpoint);
                set(&mut c.paths.data_dir, a.data);
                if let Some(p) = a.pooling {
                    c.train.pooling = p;
                }
            })?;
            commands::eval_sts(&config, &a.common.out)
        }
        Command::DumpEmbeddings(a) => {
            let config = resolve(&a.common, |c| {
                set(&mut c.paths.checkpoint, a.checkpoint);
                set(&mut c.paths.input, a.input);
                if let Some(l) = a.language {
                    c.eval.language = l;
                }
                if let Some(p) = a.pooling {
                    c.train.pooling = p;
                }
            })?;
            commands::dump_embeddings(&config, &a.common.out)
        }
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 2 bad arguments or config, 3 I/O failure,
/// 4 numerical failure, 1 anything else.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
