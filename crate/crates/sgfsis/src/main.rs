use std::process::ExitCode;

fn main() -> ExitCode {
    sgfsis::cli::run(std::env::args_os())
}
