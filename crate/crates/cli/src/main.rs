use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsmo_cli::commands::{
    cmd_gradient_check, cmd_report, cmd_run, cmd_sweep, cmd_validate_network, format_speedup, ReportKind,
    ReportOptions, GRADIENT_TOLERANCE,
};
use dsmo_cli::{CliError, ExperimentConfig};
use dsmo_core::metrics::Field;

#[derive(Parser)]
#[command(name = "dsmo", version, about = "Decentralized stochastic multi-level optimization experiments")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run `reps` repetitions and write one CSV per run plus manifest.json.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: output_path from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Run the config for each K and write a speedup table.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        eval_every: Option<usize>,
        /// Comma-separated agent counts (default: K_list from the config).
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value = "mse_to_opt")]
        field: Field,
    },
    /// Check the mixing matrix of the network block.
    ValidateNetwork {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare the exact hypergradient with central finite differences.
    GradientCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
    },
    /// Summarize run CSVs: log-log slopes, speedup table or consensus decay.
    Report {
        /// Glob of run CSVs, e.g. `out/run_*.csv`.
        #[arg(long)]
        glob: String,
        #[arg(long)]
        kind: ReportKind,
        #[arg(long, default_value = "mse_to_opt")]
        field: Field,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        t_min: Option<u64>,
        #[arg(long)]
        t_max: Option<u64>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &ConfigArgs, eval_every: Option<usize>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if eval_every.is_some() {
        cfg.eval_every = eval_every;
    }
    cfg.validate_static()?;
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.unwrap_or_else(|| cfg.output_path.clone())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { cfg, out, eval_every } => {
            let cfg = load(&cfg, eval_every)?;
            let out = cmd_run(&cfg, &out_dir(out, &cfg))?;
            println!("wrote {} ({} runs)", out.manifest.display(), out.csvs.len());
        }
        Command::Sweep { cfg, out, eval_every, k_list, epsilon, field } => {
            let cfg = load(&cfg, eval_every)?;
            let ks = k_list
                .or_else(|| cfg.k_list.clone())
                .ok_or_else(|| CliError::config("/K_list", "pass --k-list or set K_list"))?;
            let eps = epsilon
                .or(cfg.epsilon)
                .ok_or_else(|| CliError::config("/epsilon", "pass --epsilon or set epsilon"))?;
            let rows = cmd_sweep(&cfg, &ks, eps, field, &out_dir(out, &cfg))?;
            print!("{}", format_speedup(&rows));
        }
        Command::ValidateNetwork { cfg } => {
            let cfg = load(&cfg, None)?;
            let (report, text) = cmd_validate_network(&cfg)?;
            print!("{text}");
            if !report.passes(1e-12) {
                return Err(CliError::Failed("mixing matrix invariants violated".into()));
            }
        }
        Command::GradientCheck { cfg, points, fd_step } => {
            let cfg = load(&cfg, None)?;
            let err = cmd_gradient_check(&cfg, points, fd_step)?;
            let verdict = if err <= GRADIENT_TOLERANCE { "PASS" } else { "FAIL" };
            println!("points = {points}\nfd_step = {fd_step:e}\nmax relative error = {err:.3e}\nverdict = {verdict}");
            if err > GRADIENT_TOLERANCE {
                return Err(CliError::Failed(format!("max relative error {err:.3e} exceeds {GRADIENT_TOLERANCE:e}")));
            }
        }
        Command::Report { glob, kind, field, epsilon, t_min, t_max, out } => {
            let opts = ReportOptions { kind, field, epsilon, t_min, t_max };
            let text = cmd_report(&glob, &opts)?;
            print!("{text}");
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::config("/threads", e.to_string())),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
