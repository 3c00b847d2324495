use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pluripot_cli::run::exit;

#[derive(Parser)]
#[command(name = "pluripot", version, about = "Discrete pluripotential experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on it in Jacobi mode.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Repeat the grid experiments of a config at several spacings.
    Refine {
        config: PathBuf,
        /// Comma-separated decreasing grid spacings.
        #[arg(long = "h", value_delimiter = ',', required = true)]
        h: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn set_jobs(jobs: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = jobs {
        anyhow::ensure!(n > 0, pluripot_cli::ValidationError("--jobs must be positive".into()));
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, jobs } => set_jobs(jobs).and_then(|_| pluripot_cli::run(&config, out.as_deref())),
        Command::Refine { config, h, out, jobs } => {
            set_jobs(jobs).and_then(|_| pluripot_cli::refine(&config, &h, out.as_deref()))
        }
    };
    match result {
        Ok(summary) => {
            println!("wrote {} files to {}", summary.manifest.len() + 1, summary.out_dir.display());
            if summary.exit_code == exit::UNEXPECTED_VERDICT {
                eprintln!("classification witnessed NotPHyperconvex where PHyperconvex was expected");
            }
            ExitCode::from(summary.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(pluripot_cli::exit_code(&e))
        }
    }
}
