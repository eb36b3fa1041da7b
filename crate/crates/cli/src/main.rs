use std::io::Write;
use std::process::ExitCode;

use camforge::commands::{run, Command};
use clap::Parser;

/// CAM losses, network-free refinement and segmentation metrics.
#[derive(Debug, Parser)]
#[command(name = "camforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(text) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("camforge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
