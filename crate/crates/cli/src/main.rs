use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gtomo_cli::artifacts::read_record_file;
use gtomo_cli::config::{ExperimentConfig, Scheme};
use gtomo_cli::{ingest, run, verify_frame, CliError, Outcome, Plan};

/// Group-theoretic quantum tomography: simulate, reconstruct, verify.
#[derive(Parser, Debug)]
#[command(name = "gtomo", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GTOMO_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Replaces the config seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured state and reconstruct it.
    Run(Common),
    /// Reconstruct from a measurement-record CSV.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Record file (`scheme,<setting>,<outcome>,count`).
        #[arg(long)]
        records: PathBuf,
    },
    /// Check k~, trace, closure and covariance identities of a frame.
    VerifyFrame(Common),
    /// Print the available schemes and their config keys.
    ListSchemes,
}

fn plan(common: &Common, needs_state: bool) -> Result<(Plan, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed_override {
        cfg.seed = Some(seed);
    }
    let plan = cfg.validate(needs_state)?;
    let out = common.out.clone().or_else(|| plan.out.clone()).ok_or_else(|| CliError::Config("no output directory (use --out or 'out')".into()))?;
    Ok((plan, out))
}

fn emit(outcome: Outcome, out: &Path) -> Result<ExitCode, CliError> {
    let written = outcome.artifacts.write(out)?;
    println!("{}", outcome.summary);
    for p in written {
        println!("  wrote {}", p.display());
    }
    Ok(if outcome.passed { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run(common) => {
            let (plan, out) = plan(&common, true)?;
            if plan.scheme == Scheme::VerifyFrame {
                return emit(verify_frame(&plan)?, &out);
            }
            emit(run(&plan)?, &out)
        }
        Command::Ingest { common, records } => {
            let (plan, out) = plan(&common, false)?;
            let (scheme, recs) = read_record_file(&records)?;
            emit(ingest(&plan, scheme, &recs)?, &out)
        }
        Command::VerifyFrame(common) => {
            let (plan, out) = plan(&common, false)?;
            emit(verify_frame(&plan)?, &out)
        }
        Command::ListSchemes => {
            for s in Scheme::ALL {
                println!("{:<16} {}", s.as_str(), s.summary());
                println!("{:<16} keys: scheme, seed, shards, out, {}", "", s.keys().join(", "));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
