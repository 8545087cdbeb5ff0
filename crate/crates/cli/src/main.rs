//! `graphssl` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use graphssl::{ExperimentConfig, ExperimentId};

#[derive(Debug, Parser)]
#[command(name = "graphssl", version, about = "Graph-based semi-supervised learning experiments")]
struct Args {
    /// One of: channel, rates-krige, rates-probit, extrapolation, mcmc-moons, spectra, smallnoise.
    experiment: String,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Use publication-scale realization counts and grid sizes.
    #[arg(long)]
    paper_scale: bool,
    /// Output directory (defaults to the config's `output`, then `out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base random seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parameter sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&args) {
        Ok(out) => {
            log::info!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> graphssl::Result<PathBuf> {
    let id: ExperimentId = args.experiment.parse()?;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if args.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(id.name()));
    graphssl::run(id, &cfg, &out)?;
    Ok(out)
}
