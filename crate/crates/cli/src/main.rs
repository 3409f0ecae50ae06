use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use divens_cli::cli::{run, Cli, Outcome};

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let started = unix_ms();
    let outcome = run(&cli);
    let code: u8 = match &outcome {
        Ok(Outcome::Success | Outcome::Empty) => 0,
        Ok(Outcome::Partial) => 2,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    // timestamps live only here so report files stay byte-reproducible
    if cli.out_dir.is_dir() && !matches!(outcome, Ok(Outcome::Empty)) {
        let sidecar = serde_json::json!({
            "argv": std::env::args().collect::<Vec<_>>(),
            "started_unix_ms": started,
            "finished_unix_ms": unix_ms(),
            "exit_code": code,
            "parallel": divens_core::par::is_parallel(),
            "threads": cli.threads,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let _ = std::fs::write(cli.out_dir.join("run.json"), format!("{sidecar:#}\n"));
    }
    ExitCode::from(code)
}
