use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(kanmix::cli::run(std::env::args_os()))
}
