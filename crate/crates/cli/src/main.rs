use std::io::{self, Write};
use std::panic;
use std::process::ExitCode;

use clap::Parser;
use refsearch_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = refsearch::par::set_threads(n) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    let stdout = io::stdout();
    let outcome = panic::catch_unwind(panic::AssertUnwindSafe(|| {
        let mut out = stdout.lock();
        let r = run(&cli, &mut out);
        let _ = out.flush();
        r
    }));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code() as u8)
        }
        // the panic message has already been printed by the default hook
        Err(_) => ExitCode::from(2),
    }
}
