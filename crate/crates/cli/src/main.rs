use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use sparq_cli::commands::{EXIT_OK, EXIT_PARTIAL, EXIT_USAGE};
use sparq_cli::{exit_code, run, Cli, Outcome};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK } as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let mut out = std::io::BufWriter::new(std::io::stdout());
    let result = run(cli, &mut out);
    let flushed = out.flush();
    let code = match (result, flushed) {
        (Ok(_), Err(e)) => exit_code(&e.into()),
        (Ok(Outcome::Success), Ok(())) => EXIT_OK,
        (Ok(Outcome::Partial), Ok(())) => EXIT_PARTIAL,
        (Err(e), _) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
