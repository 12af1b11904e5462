use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nvlab_cli::config::{GridSpec, Overrides, RunConfig};
use nvlab_cli::{cmd_fit, cmd_odmr, cmd_pipeline, cmd_simulate, cmd_validate, CliError, FitOptions};
use nvlab_core::fit::FitModel;

/// Virtual NV-center spin-coherence lab.
#[derive(Parser)]
#[command(name = "nvlab", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    power_dbm: Option<f64>,
    /// Blocks averaged per sweep point.
    #[arg(long, global = true)]
    blocks: Option<usize>,
    /// Sweep grid `start:stop:count[:log]` in the experiment's x unit.
    #[arg(long, global = true)]
    grid: Option<GridSpec>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one experiment and write its sweep file.
    Simulate {
        /// Rabi, T1, echo or ODMR.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Fit a sweep file.
    Fit {
        data: PathBuf,
        /// Rabi, T1 or HahnEcho; defaults to the data's kind.
        #[arg(long)]
        model: Option<String>,
        /// Fit the Rabi detuning instead of holding it at zero.
        #[arg(long)]
        free_detuning: bool,
        #[arg(long)]
        uniform_weights: bool,
    },
    /// Simulate an ODMR scan and locate the resonance dips.
    Odmr,
    /// Rabi → T1 → echo with the fitted π-pulse, then the hierarchy check.
    Pipeline,
    /// Check T1 >= T2 > T2* on three fit files.
    Validate {
        #[arg(num_args = 3, required = true)]
        fits: Vec<PathBuf>,
    },
}

fn load(common: &Common, kind: Option<String>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(&Overrides {
        kind,
        seed: common.seed,
        out: common.out.clone(),
        power_dbm: common.power_dbm,
        blocks: common.blocks,
        grid: common.grid,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let c = &cli.common;
    match cli.command {
        Command::Simulate { kind } => cmd_simulate(&load(c, kind)?.resolve()?, &mut stdout).map(drop),
        Command::Odmr => cmd_odmr(&load(c, Some("odmr".into()))?.resolve()?, &mut stdout).map(drop),
        Command::Pipeline => cmd_pipeline(&load(c, None)?.resolve()?, &mut stdout).map(drop),
        Command::Fit { data, model, free_detuning, uniform_weights } => {
            let cfg = load(c, None)?;
            let model = match model {
                None => None,
                Some(m) => Some(FitModel::from_name(&m).ok_or_else(|| CliError::Config(format!("unknown fit model `{m}`")))?),
            };
            let opts = FitOptions {
                model,
                free_detuning: free_detuning || cfg.fit.free_detuning,
                uniform_weights: uniform_weights || cfg.fit.uniform_weights,
                out: c.out.as_ref().map(PathBuf::from),
            };
            cmd_fit(&data, &opts, &mut stdout).map(drop)
        }
        Command::Validate { fits } => cmd_validate(&fits, &mut stdout),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
