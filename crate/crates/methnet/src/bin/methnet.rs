use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use methnet::simulate::{load_spec, simulate};
use methnet::{Error, Pipeline, Result, RunConfig, Slice};

#[derive(Parser)]
#[command(name = "methnet", version, about = "Network community oncomarkers from methylation cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read, filter and impute inputs, then estimate healthy moments.
    Ingest(RunArgs),
    /// Write a synthetic cohort and a matching run config.
    Simulate {
        /// Synthetic cohort spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the cohort files.
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Interaction table, per-pair Wald field, node weights and adjacency.
    Network(RunArgs),
    /// Largest component, block count and spectral partition.
    Communities(RunArgs),
    /// Training thresholds and train/test prognostic scores.
    Score(RunArgs),
    /// Survival validation reports on both tumour cohorts.
    Validate(RunArgs),
    /// Methylation-expression concordance of marker edges.
    Concordance(RunArgs),
    /// Every stage in order.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_override: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.k_override.is_some() {
            cfg.k_override = self.k_override;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if let Some(c) = self.chunk_size {
            cfg.chunk_size = c;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_slice(args: &RunArgs, slice: Slice) -> Result<()> {
    let mut p = Pipeline::new(args.load()?)?;
    for r in p.run(slice)? {
        println!("{}: {}", r.stage, r.status.as_str());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out, seed } => load_spec(config).and_then(|mut spec| {
            if let Some(s) = seed {
                spec.seed = *s;
            }
            let cfg = simulate(&spec, out)?;
            println!("wrote {}", cfg.display());
            Ok(())
        }),
        Command::Ingest(a) => run_slice(a, Slice::Ingest),
        Command::Network(a) => run_slice(a, Slice::Network),
        Command::Communities(a) => run_slice(a, Slice::Communities),
        Command::Score(a) => run_slice(a, Slice::Score),
        Command::Validate(a) => run_slice(a, Slice::Validate),
        Command::Concordance(a) => run_slice(a, Slice::Concordance),
        Command::Run(a) => run_slice(a, Slice::All),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
