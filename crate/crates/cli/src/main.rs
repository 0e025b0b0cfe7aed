use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use dumbbell_core::cli_io::{self, dispatch, parse_config, CliError, Command, Diagnostic};

#[derive(Parser)]
#[command(name = "dumbbell", version, about = "Bead-spring connector in a spectral stochastic Stokes flow")]
struct Cli {
    /// Run configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and DUMBBELL_OUT_DIR).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Print the fully expanded config and exit.
    #[arg(long, global = true)]
    echo_config: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One trajectory as CSV.
    Simulate,
    /// End-of-run summaries of an ensemble as JSON.
    Ensemble,
    /// Path plan, control signal and tracking report.
    Control,
    /// A diagnostic report.
    Diagnose {
        #[arg(value_enum)]
        which: Which,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Hookean,
    Escape,
    Drift,
    Hormander,
    Converge,
    Tube,
}

impl From<Which> for Diagnostic {
    fn from(w: Which) -> Self {
        match w {
            Which::Hookean => Diagnostic::Hookean,
            Which::Escape => Diagnostic::Escape,
            Which::Drift => Diagnostic::Drift,
            Which::Hormander => Diagnostic::Hormander,
            Which::Converge => Diagnostic::Converge,
            Which::Tube => Diagnostic::Tube,
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = cli.config.as_ref().context("no config given (use --config FILE)")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = parse_config(&text)?;
    if cli.echo_config {
        print!("{}", cfg.echo());
        return Ok(());
    }
    let cmd = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Ensemble => Command::Ensemble,
        Cmd::Control => Command::Control,
        Cmd::Diagnose { which } => Command::Diagnose(which.into()),
    };
    let dir = cli_io::resolve_output_dir(cli.out.as_deref(), &cfg);
    for f in dispatch(cmd, &cfg, &dir)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = match err.downcast_ref::<CliError>() {
                Some(e) => e.to_json(),
                None => serde_json::json!({ "error": "usage", "message": format!("{err:#}") }).to_string(),
            };
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
