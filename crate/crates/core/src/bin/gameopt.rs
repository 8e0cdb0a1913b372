use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(gameopt::cli::run(std::env::args_os()))
}
