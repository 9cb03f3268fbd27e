use std::process::ExitCode;

fn main() -> ExitCode {
    sira::cli::main_with_args(std::env::args_os())
}
