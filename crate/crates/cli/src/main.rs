use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndr_cli::{commands, output, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ndr", version, about = "Neural generative distributional regression experiments")]
struct Cli {
    /// TOML configuration; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Seeds as `a..b` or a comma list.
    #[arg(long, global = true)]
    seeds: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic dataset.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one sampler and save the network and its training trace.
    Train {
        /// CSV to train on instead of a synthetic sample.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved network on the configured model.
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// CDF error over the (m1, m2, dtilde) grid.
    Grid {
        #[arg(long)]
        out: PathBuf,
    },
    /// CDF error against m1 * m2 on the single-covariate model.
    Decay {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampler against least-squares and quantile regression.
    Compare {
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, filter, standardize, fit and score a tabular dataset.
    Realdata {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        response: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
    /// Quick end-to-end sanity checks.
    Selftest,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config(format!("bad seed list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &cli.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(m) = &cli.model {
        cfg.model = m.clone();
    }
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    if let Some(e) = cli.epochs {
        cfg.train.epochs = e;
        cfg.compare.epochs = e;
        cfg.decay.epochs = e;
    }
    if let Cmd::Realdata { data, response, .. } = &cli.cmd {
        if data.is_some() {
            cfg.realdata.path = data.clone();
        }
        if let Some(r) = response {
            cfg.realdata.response = r.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli)?;
    let threads = cli.threads;
    match &cli.cmd {
        Cmd::Simulate { seed, out } => commands::simulate(cfg.sim_model()?, cfg.n, *seed, out),
        Cmd::Train { data, seed, out } => commands::train(&cfg, data.as_deref(), *seed, out),
        Cmd::Eval { net, seed, out } => commands::eval(&cfg, net, *seed, out),
        Cmd::Grid { out } => output::write_results_file(out, &commands::grid_rows(&cfg, threads)?),
        Cmd::Decay { out } => commands::write_decay(output::create(out)?, &commands::decay_rows(&cfg, threads)?),
        Cmd::Compare { out } => output::write_results_file(out, &commands::compare_rows(&cfg, threads)?),
        Cmd::Realdata { out, .. } => output::write_results_file(out, &commands::realdata_rows(&cfg, threads)?),
        Cmd::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Cmd::Selftest => commands::selftest(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
