//! `sfc` — command-line front end for the multiple-choice scoring harness.
//!
//! Subcommands: `eval`, `sweep`, `flip-eval`, `sfc-lab`, `calibrate`,
//! `templates`, `cache`. Results go to files and standard output; diagnostics
//! go to standard error. Exit codes: 0 success, 1 configuration error, 2
//! backend/transport failure, 3 errored-instance threshold exceeded.

mod commands;

use clap::Parser;

use sfc_core::backend::BackendError;
use sfc_core::harness::HarnessError;

fn main() {
    // Die quietly when a downstream pipe (head, less) closes early.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version print and exit 0; anything else is a config
            // error under this tool's exit-code contract.
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                std::process::exit(0);
            }
            eprint!("{err}");
            std::process::exit(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn exit_code(err: &HarnessError) -> i32 {
    match err {
        HarnessError::ErrorThreshold { .. } => 3,
        HarnessError::Backend(backend) => match backend {
            BackendError::Transport { .. }
            | BackendError::OfflineMiss
            | BackendError::MalformedResponse(_)
            | BackendError::Io(_) => 2,
            _ => 1,
        },
        _ => 1,
    }
}
