use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use triage_cli::{default_out, run, Command};

/// Wildfire post triage pipeline.
#[derive(Parser)]
#[command(name = "triage", version)]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `runs/<command>` beside the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let args = Args::parse();
    let out = args.out.unwrap_or_else(|| default_out(args.command, &args.config));
    match run(args.command, &args.config, args.seed, &out) {
        Ok(m) => {
            println!("{}: {} artifact(s) in {}", m.command, m.outputs.len(), out.display());
            for n in &m.notes {
                println!("note: {n}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprint!("error: {e}");
            eprintln!();
            ExitCode::from(1)
        }
    }
}
