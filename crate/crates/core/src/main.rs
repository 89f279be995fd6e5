use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sasnet::cli::run(std::env::args_os()))
}
