use std::process::ExitCode;

fn main() -> ExitCode {
    adens_cli::run(std::env::args_os())
}
