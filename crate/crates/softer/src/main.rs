use std::process::ExitCode;

fn main() -> ExitCode {
    softer::cli::run(std::env::args_os())
}
