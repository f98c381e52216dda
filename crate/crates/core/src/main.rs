use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tvjko::cli::{load_config, run, Mode, Status};

/// TV-JKO steps, flows, validations and oracle checks.
#[derive(Debug, Parser)]
#[command(name = "tvjko", version)]
struct Args {
    mode: Mode,
    /// JSON run configuration; `{}` when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` on a dotted path, e.g. `solver.el_tolerance=1e-8`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn fail(status: Status, message: &str) -> ExitCode {
    let line = serde_json::json!({
        "error": status,
        "exit_code": status.exit_code(),
        "message": message.replace('\n', " "),
    });
    eprintln!("{line}");
    ExitCode::from(status.exit_code() as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return fail(Status::InputError, first.trim_start_matches("error: "));
        }
    };
    let config = match load_config(args.config.as_deref(), &args.overrides).and_then(|c| c.resolve(args.mode)) {
        Ok(c) => c,
        Err(e) => return fail(Status::InputError, &e.to_string()),
    };
    match run(&config) {
        Ok(o) if o.status == Status::Ok => ExitCode::SUCCESS,
        Ok(o) => fail(o.status, o.message.as_deref().unwrap_or("run failed")),
        Err(e) => fail(Status::InputError, &e.to_string()),
    }
}
