//! Command-line front end: `prepare`, `synth`, `train`, `denoise`, `eval`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 bad input data
//! or files, 3 failure while running.

pub mod args;
mod commands;
pub mod config_file;

use clap::Parser;

pub use args::{Cli, Command};
pub use commands::read_pairs;

use crate::error::Error;
use crate::model::NetworkSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    if let Err(e) = NetworkSpec::default().audit() {
        eprintln!("error: architecture audit failed: {e}");
        return EXIT_RUNTIME;
    }
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match config_file::merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            // Help and version go to stdout, parse errors to stderr.
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_RUNTIME;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Denoise(a) => commands::denoise_cmd(a),
        Command::Eval(a) => commands::eval(a),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
