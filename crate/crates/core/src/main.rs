use std::process::ExitCode;

fn main() -> ExitCode {
    ergokit::cli::main_with_args(std::env::args_os())
}
