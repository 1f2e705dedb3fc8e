use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use traceta_cli::commands::{self, Overrides, ReplayVerdict, DEFAULT_SEEDS};
use traceta_cli::CliResult;
use traceta_core::config::BackendKind;

#[derive(Parser)]
#[command(name = "traceta", version, about = "Traceable LLM-assisted thematic analysis of interview transcripts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Http,
    Mock,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Model and embedding backend for both chat and embeddings.
    #[arg(long, value_enum)]
    backend: Option<Backend>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            seed: self.seed,
            max_rounds: self.max_rounds,
            backend: self.backend.map(|b| match b {
                Backend::Http => BackendKind::Http,
                Backend::Mock => BackendKind::Mock,
            }),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, code, synthesize, refine and evaluate into a run directory.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Ingest and open-code a corpus into a new run directory.
    Code {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// (Re)build subthemes and themes over the run's live codes.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run or resume the refinement loop of a synthesized run.
    Refine {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score the run's current codebook on its test split.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score external codebook JSON files on the corpus split.
    Compare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long = "codebook", required = true)]
        codebooks: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Full runs for several seeds plus paired Iter-1 vs Best statistics.
    Replicates {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds; the --seed flag is ignored here.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
        seeds: Vec<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the evidence tree and ledger entries behind an artifact.
    Trace {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        id: String,
    },
    /// Check that the ledger reproduces the stored hierarchy.
    Replay {
        #[arg(long)]
        out: PathBuf,
    },
    /// Match generated themes to human themes by embedding similarity.
    Align {
        #[arg(long)]
        out: PathBuf,
        /// JSON list of {"label", "description"} objects.
        #[arg(long)]
        human: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn dispatch(cmd: Command) -> CliResult<(String, u8)> {
    let ok = |s: String| Ok((s, 0));
    match cmd {
        Command::Run { corpus, out, common } => ok(commands::cmd_run(&corpus, &out, &common.overrides())?),
        Command::Code { corpus, out, common } => ok(commands::cmd_code(&corpus, &out, &common.overrides())?),
        Command::Synthesize { out, common } => ok(commands::cmd_synthesize(&out, &common.overrides())?),
        Command::Refine { out, common } => ok(commands::cmd_refine(&out, &common.overrides())?),
        Command::Evaluate { out, common } => ok(commands::cmd_evaluate(&out, &common.overrides())?),
        Command::Compare { corpus, codebooks, out, common } => ok(commands::cmd_compare(&corpus, &codebooks, &out, &common.overrides())?),
        Command::Replicates { corpus, out, seeds, common } => ok(commands::cmd_replicates(&corpus, &out, &seeds, &common.overrides())?),
        Command::Trace { out, id } => ok(commands::cmd_trace(&out, &id)?),
        Command::Replay { out } => {
            let v = commands::cmd_replay(&out)?;
            let code = if matches!(v, ReplayVerdict::Pass { .. }) { 0 } else { 4 };
            Ok((v.line(), code))
        }
        Command::Align { out, human, common } => ok(commands::cmd_align(&out, &human, &common.overrides())?),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("TRACETA_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse().command) {
        Ok((text, code)) => {
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
