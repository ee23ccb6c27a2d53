use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = liftguard_cli::Cli::parse();
    liftguard_cli::init_logging(cli.verbose);
    match liftguard_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(liftguard_cli::exit_code(&e))
        }
    }
}
