use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

/// Bad arguments or configuration; reported with exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "tmlga", version, about = "Temporal moment localization with guided attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; any config key can be overridden with --key value.
    Train(commands::TrainArgs),
    /// Write JSON-lines predictions for every annotation in a manifest.
    Predict(commands::PredictArgs),
    /// Score a predictions file.
    Evaluate(commands::EvaluateArgs),
    /// Train and score the four loss configurations over several seeds.
    Ablate(commands::AblateArgs),
    /// Generate a synthetic benchmark; any spec key can be overridden.
    Synth(commands::SynthArgs),
    /// Compare analytic and finite-difference gradients of every operation.
    Gradcheck(commands::GradcheckArgs),
    /// Print the attention weights for one video and query as CSV.
    DumpAttention(commands::DumpAttentionArgs),
}

fn init_logging() -> Result<(), UsageError> {
    let level = match std::env::var("TMLGA_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => {
            return Err(UsageError(format!(
                "TMLGA_LOG must be quiet, info, or debug, got `{other}`"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tmlga::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if cause.is::<UsageError>() || cause.is::<serde_json::Error>() {
            return 1;
        }
    }
    2
}

fn run() -> anyhow::Result<()> {
    init_logging()?;
    let args = commands::extract_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(&args.argv) {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            e.print()?;
            if usage {
                return Err(UsageError("invalid arguments".into()).into());
            }
            return Ok(());
        }
    };
    let overrides = args.overrides;
    match cli.command {
        Command::Train(a) => commands::train(a, &overrides),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a, &overrides),
        Command::Synth(a) => commands::synth(a, &overrides),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::DumpAttention(a) => commands::dump_attention(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if !(err.is::<UsageError>() && err.to_string() == "invalid arguments") {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(exit_status(&err))
        }
    }
}
