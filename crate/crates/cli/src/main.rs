use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(metasaclag_cli::app::run(std::env::args_os()))
}
