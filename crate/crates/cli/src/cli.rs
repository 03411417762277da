//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::two_agent::TwoAgentArgs;

/// Overrides the output directory when `--out` is absent.
pub const OUT_ENV: &str = "EXDIFF_OUT";

#[derive(Debug, Parser)]
#[command(name = "exdiff", version, about = "Exact diffusion and baseline simulators with stability analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured algorithm and write traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Grid and bisection search for the largest stable step.
    StabilityScan {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Spectral report and step-size bounds for one matrix.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Two-agent example: closed-form roots and simulated traces.
    TwoAgent {
        #[arg(long, default_value_t = 0.5)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long, default_value_t = 1.9)]
        mu: f64,
        #[arg(long = "mu-e", default_value_t = 1.6)]
        mu_e: f64,
        #[arg(long, default_value_t = 20_000)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-10)]
        stop: f64,
        /// Bisect the EXTRA onset in (0, scan-max].
        #[arg(long = "scan-max")]
        scan_max: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

/// `--out`, then `EXDIFF_OUT`, then the config's `output_dir`, then `out`.
pub fn output_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|s| !s.is_empty()) {
        return PathBuf::from(p);
    }
    config.map_or_else(|| PathBuf::from("out"), Path::to_path_buf)
}

fn load(path: &Path, common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    let out = output_dir(common.out.as_deref(), cfg.output_dir.as_deref());
    Ok((cfg, out))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::config("--jobs", "must be at least 1"));
        }
        b = b.num_threads(j);
    }
    let pool = b.build().map_err(|e| CliError::config("--jobs", e.to_string()))?;
    pool.install(f)
}

/// Execute one parsed command; the returned line summarizes the outcome.
pub fn dispatch(cmd: Command) -> Result<String> {
    match cmd {
        Command::Run { config, common } => {
            let (cfg, out) = load(&config, &common)?;
            let s = with_pool(common.jobs, || crate::run::cmd_run(&cfg, &out))?;
            let parts: Vec<String> = s.runs.iter().map(|r| format!("{}={}", r.label, r.status)).collect();
            Ok(format!("wrote {} traces to {}: {}", s.runs.len(), out.display(), parts.join(" ")))
        }
        Command::StabilityScan { config, common } => {
            let (cfg, out) = load(&config, &common)?;
            let s = with_pool(common.jobs, || crate::scan::cmd_scan(&cfg, &out))?;
            let parts: Vec<String> = s
                .results
                .iter()
                .map(|r| format!("{}={}", r.algorithm, r.max_stable_mu.map_or("none".into(), |m| format!("{m:.6e}"))))
                .collect();
            Ok(format!("max stable step: {}", parts.join(" ")))
        }
        Command::Analyze { config, common } => {
            let (cfg, out) = load(&config, &common)?;
            let r = crate::analyze::cmd_analyze(&cfg, &out)?;
            Ok(format!("wrote {} (n = {}, balanced = {})", out.join("analysis.json").display(), r.n, r.balanced))
        }
        Command::TwoAgent { a, sigma2, mu, mu_e, iterations, stop, scan_max, common } => {
            let args = TwoAgentArgs {
                a,
                sigma2,
                mu,
                mu_e,
                iterations,
                stop,
                seed: common.seed.unwrap_or(0),
                scan_max,
                ..TwoAgentArgs::default()
            };
            let out = output_dir(common.out.as_deref(), None);
            let r = with_pool(common.jobs, || crate::two_agent::cmd_two_agent(&args, &out))?;
            Ok(format!(
                "exact_diffusion={} extra={}",
                r.exact_diffusion.observed_status, r.extra.observed_status
            ))
        }
    }
}
