use std::path::PathBuf;

use anyhow::Result;
use cdkt_cli::{compare_files, load_config, run_experiment};
use cdkt_core::MetricField;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdkt", version, about = "Federated knowledge transfer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset root holding `<dataset>/` subdirectories.
        #[arg(long, env = "CDKT_DATA_DIR")]
        data_dir: Option<PathBuf>,
    },
    /// Tabulate two or more `summary.json` files.
    Compare {
        #[arg(required = true, num_args = 2..)]
        summaries: Vec<PathBuf>,
    },
    /// Print the effective config with every default filled in.
    Config { config: PathBuf },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            data_dir,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let run = run_experiment(&cfg, data_dir.as_deref(), out.as_deref())?;
            println!("wrote {}", run.out_dir.display());
            let [lo, hi] = run.summary.window;
            for field in MetricField::ALL {
                if let Some(s) = run.summary.metrics.get(field.name()) {
                    println!("{:>15}  median {:.6}  stddev {:.6}  (rounds {lo}-{hi})", field.name(), s.median, s.stddev);
                }
            }
        }
        Command::Compare { summaries } => print!("{}", compare_files(&summaries)?.render()),
        Command::Config { config } => print!("{}", load_config(&config)?.echo()),
    }
    Ok(())
}
