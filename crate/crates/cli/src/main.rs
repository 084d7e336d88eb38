//! `nlwave`: batch front end for the traveling-wave toolkit.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Out, SpeedArg};
use config::RunConfig;
use exit::CliError;

#[derive(Parser)]
#[command(
    name = "nlwave",
    version,
    about = "Invasion waves of a nonlocal predator-prey system"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized audits; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Equilibria, admissibility and dispersion report.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Extra speed to report decay rates for.
        #[arg(long)]
        c: Option<SpeedArg>,
    },
    /// Super/sub-solutions, squeeze trace and wave profile.
    Wave {
        #[arg(long)]
        config: PathBuf,
        /// Wave speed, or `cstar` for the continuation to the minimal speed.
        #[arg(long)]
        c: Option<SpeedArg>,
    },
    /// Invasion run plus the optional logistic comparison.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Also recover the speed of a synthetic translating front.
        #[arg(long)]
        translation_check: bool,
    },
    /// Parameter sweep into a single CSV atlas.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fast oracle checks of the numerical core.
    Selftest {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

const DEFAULT_OUT: &str = "nlwave-out";

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Out {
    let dir = flag
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Out::new(dir)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set thread count: {e}")))?;
    }
    match &cli.cmd {
        Cmd::Analyze { config, c } => {
            let l = RunConfig::load(config)?;
            commands::analyze(&l, &out_dir(&cli.out, &l.cfg), *c)
        }
        Cmd::Wave { config, c } => {
            let l = RunConfig::load(config)?;
            commands::wave(&l, &out_dir(&cli.out, &l.cfg), *c)
        }
        Cmd::Simulate {
            config,
            translation_check,
        } => {
            let l = RunConfig::load(config)?;
            commands::simulate(&l, &out_dir(&cli.out, &l.cfg), *translation_check)
        }
        Cmd::Sweep { config } => {
            let l = RunConfig::load(config)?;
            commands::sweep(&l, &out_dir(&cli.out, &l.cfg))
        }
        Cmd::Selftest { config } => {
            let loaded = config.as_deref().map(RunConfig::load).transpose()?;
            let seed = cli
                .seed
                .or(loaded.as_ref().map(|l| l.cfg.seed))
                .unwrap_or(0);
            let out = match (&cli.out, &loaded) {
                (None, None) => None,
                (_, Some(l)) => Some(out_dir(&cli.out, &l.cfg)),
                (Some(d), None) => Some(Out::new(d.clone())),
            };
            commands::selftest(out.as_ref(), seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
