use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mkvmlmc::cli::run(std::env::args_os()))
}
