use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod methods;

#[derive(Parser)]
#[command(name = "pcreg", version, about = "Correspondence-free point cloud registration")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic shape to a point cloud file.
    Synth(commands::SynthArgs),
    /// Write generated registration pairs to a directory.
    GenData(commands::GenDataArgs),
    /// Train a PCRNet or i-PCRNet head.
    Train(commands::TrainArgs),
    /// Register a source cloud to a template and print the 4x4 transform.
    Register(commands::RegisterArgs),
    /// Summarize a records CSV: error statistics, success curve and AUC.
    Eval(commands::EvalArgs),
    /// Run every configured method on the same generated test pairs.
    Bench(commands::BenchArgs),
    /// Compare reverse-mode gradients with finite differences.
    GradCheck(commands::GradCheckArgs),
}

fn init_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("PCREG_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("PCREG_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

pub(crate) fn ensure_dir(p: &Path) -> pcreg::Result<PathBuf> {
    std::fs::create_dir_all(p)?;
    Ok(p.to_path_buf())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Register(a) => commands::register(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
