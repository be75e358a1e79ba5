use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use enas_forge::commands::{self, parse_spec, CHECKPOINT_FILE};
use enas_forge::config::RunConfigFile;
use enas_forge::dot::export_dot;

#[derive(Parser)]
#[command(name = "enas-forge", version, about = "Weight-sharing neural architecture search at desk scale")]
struct Cli {
    /// TOML run configuration; task defaults fill in missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Search checkpoint to resume from or read.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Count for `sample`, `random` and `ablate`.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Alternate shared-weight and controller training.
    Search {
        /// Stop after this many epochs (the checkpoint allows resuming).
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Sample candidates from a trained controller and pick the best.
    Derive,
    /// Train one genome from scratch.
    Retrain {
        #[arg(long)]
        genome: Option<PathBuf>,
    },
    /// Retrain uniformly sampled genomes.
    Random,
    /// Frozen-controller ablation on the macro image space.
    Ablate,
    /// List every genome of a space as decision vectors.
    Enumerate {
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Print uniformly sampled genomes as decision vectors.
    Sample {
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Render a genome file as Graphviz DOT.
    ExportDot {
        #[arg(long)]
        genome: PathBuf,
    },
    /// Evaluate a genome with the shared weights of a checkpoint.
    Eval {
        #[arg(long)]
        genome: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfigFile> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::defaults("lm")?,
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.run.out = o.clone();
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ENAS_FORGE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("ENAS_FORGE_THREADS=`{v}` is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = load_config(&cli)?;
    let checkpoint = || {
        cli.checkpoint
            .clone()
            .unwrap_or_else(|| cfg.run.out.join(CHECKPOINT_FILE))
    };
    let stdout = std::io::stdout();
    match &cli.command {
        Command::Search { max_epochs } => commands::cmd_search(&cfg, cli.checkpoint.as_deref(), *max_epochs),
        Command::Derive => commands::cmd_derive(&cfg, &checkpoint()).map(|_| ()),
        Command::Retrain { genome } => match genome {
            Some(g) => commands::cmd_retrain(&cfg, Some(g), None),
            None => commands::cmd_retrain(&cfg, None, Some(&checkpoint())),
        },
        Command::Random => commands::cmd_random(&cfg, cli.n),
        Command::Ablate => commands::cmd_ablate(&cfg, cli.n),
        Command::Enumerate { kind, nodes } => {
            let spec = parse_spec(kind.as_deref().unwrap_or(&cfg.space.kind), nodes.unwrap_or(cfg.space.nodes))?;
            let mut out = std::io::BufWriter::new(stdout.lock());
            commands::cmd_enumerate(&spec, &mut out)?;
            Ok(out.flush()?)
        }
        Command::Sample { kind, nodes } => {
            let spec = parse_spec(kind.as_deref().unwrap_or(&cfg.space.kind), nodes.unwrap_or(cfg.space.nodes))?;
            let mut out = std::io::BufWriter::new(stdout.lock());
            commands::cmd_sample(&spec, cli.n.unwrap_or(1), cfg.run.seed, &mut out)?;
            Ok(out.flush()?)
        }
        Command::ExportDot { genome } => {
            let text = std::fs::read_to_string(genome).with_context(|| format!("reading genome {}", genome.display()))?;
            let g = enas_core::space::Genome::parse(&text, None)?;
            print!("{}", export_dot(&g));
            Ok(())
        }
        Command::Eval { genome } => {
            commands::cmd_eval(&cfg, &checkpoint(), genome)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
