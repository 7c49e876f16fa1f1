use std::process::ExitCode;

fn main() -> ExitCode {
    veribtot_cli::main_with(std::env::args_os())
}
