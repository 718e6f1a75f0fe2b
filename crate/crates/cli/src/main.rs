use std::process::ExitCode;

fn main() -> ExitCode {
    bemtrace_cli::init_logging();
    ExitCode::from(bemtrace_cli::run(std::env::args_os()))
}
