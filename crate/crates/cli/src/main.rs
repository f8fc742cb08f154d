mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topicmeta::composition::Method;
use topicmeta::ErrorKind;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] topicmeta::Error),
    #[error("{0}")]
    Output(String),
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Output(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

/// Topic-metadata effect estimation for logistic-normal topic models.
#[derive(Debug, Parser)]
#[command(name = "topicmeta", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; also the default location of inputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a corpus with known topics and covariate effects.
    Generate {
        #[arg(long)]
        documents: Option<usize>,
        #[arg(long)]
        topics: Option<usize>,
    },
    /// Fit the topic model and write a checkpoint.
    Fit {
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long)]
        formula: Option<String>,
    },
    /// Sample topic proportions from a fitted model.
    Draws {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Estimate a topic-covariate relationship by the method of composition.
    Effect {
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        topic: Option<usize>,
        #[arg(long)]
        focal: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Compare model-selection metrics over a list of topic counts.
    Searchk {
        /// Comma-separated list, e.g. 5,10,15.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
}

fn apply_flags(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Generate { documents, topics } => {
            if let Some(d) = documents {
                cfg.generate.documents = *d;
            }
            if let Some(k) = topics {
                cfg.generate.topics = *k;
            }
        }
        Command::Fit { topics, formula } => {
            if let Some(k) = topics {
                cfg.fit.topics = *k;
            }
            if let Some(f) = formula {
                cfg.fit.formula = Some(f.clone());
            }
        }
        Command::Draws { count } => {
            if let Some(c) = count {
                cfg.draws.count = *c;
            }
        }
        Command::Effect { method, topic, focal, repeats } => {
            if let Some(m) = method {
                cfg.effect.method = *m;
            }
            if let Some(t) = topic {
                cfg.effect.topic = *t;
            }
            if let Some(f) = focal {
                cfg.effect.focal = Some(f.clone());
            }
            if let Some(r) = repeats {
                cfg.effect.repeats = *r;
            }
        }
        Command::Searchk { ks } => {
            if let Some(ks) = ks {
                cfg.searchk.ks = ks.clone();
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_flags(&cli, &mut cfg);
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    match cli.command {
        Command::Generate { .. } => commands::generate(&cfg),
        Command::Fit { .. } => commands::fit_model(&cfg),
        Command::Draws { .. } => commands::draws(&cfg),
        Command::Effect { .. } => commands::effect(&cfg),
        Command::Searchk { .. } => commands::searchk(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
