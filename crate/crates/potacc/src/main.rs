use std::process::ExitCode;

fn main() -> ExitCode {
    potacc::cli::main_with(std::env::args_os())
}
