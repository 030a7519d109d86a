use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dds::commands::{self, Context, Overrides};
use dds::{CliResult, RunConfig};

/// Spectrogram decomposition with learned flow dictionaries.
///
/// Every command reads one TOML config; missing keys take their defaults
/// (print them with `dds config`). Paths under `[paths]` can be
/// overridden with the flags below.
#[derive(Parser)]
#[command(name = "dds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (isolated notes and test mixtures).
    Synth(Flags),
    /// Train the flow models the method needs.
    Train(Flags),
    /// Decompose every test snippet.
    Decompose(Flags),
    /// Score decomposition results against the piano rolls.
    Evaluate(Flags),
    /// Time one solver iteration across parameter sweeps.
    Bench(Flags),
    /// Print the effective configuration with all defaults filled in.
    Config(Flags),
}

#[derive(Args)]
struct Flags {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// nmf, dds1, dds2 or dds3.
    #[arg(long)]
    method: Option<String>,
    /// Dictionary entries per source for dds2/dds3.
    #[arg(long = "n")]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory of this command (dataset, checkpoints or results).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Independent runs executed in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// L0 sparsity threshold.
    #[arg(long)]
    epsilon: Option<f64>,
}

impl Flags {
    fn context(self) -> CliResult<Context> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let o = Overrides {
            method: self.method,
            n_components: self.n,
            seed: self.seed,
            out: self.out,
            dataset: self.dataset,
            checkpoints: self.checkpoints,
            jobs: self.jobs,
            epsilon: self.epsilon,
        };
        Context::new(cfg, o)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(f) => {
            let path = commands::synth(&f.context()?)?;
            println!("{}", path.display());
        }
        Command::Train(f) => {
            for p in commands::train(&f.context()?)? {
                println!("{}", p.display());
            }
        }
        Command::Decompose(f) => {
            for p in commands::decompose(&f.context()?)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate(f) => {
            let (_, summary) = commands::evaluate(&f.context()?)?;
            println!("rank,method,runs,mean_psa,mean_l0_eps,mean_recon_error");
            for s in summary {
                let recon = s.mean_recon_error.map_or(String::new(), |r| format!("{r:.6}"));
                println!("{},{},{},{:.6},{:.6},{recon}", s.rank, s.method, s.runs, s.mean_psa, s.mean_l0_eps);
            }
        }
        Command::Bench(f) => {
            let (report, dir) = commands::bench(&f.context()?)?;
            println!("{}", dir.display());
            for s in report.slopes {
                println!("{},{},{},{:.4}", s.method, s.measure, s.parameter.name(), s.slope);
            }
        }
        Command::Config(f) => print!("{}", f.context()?.cfg.to_toml()),
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
