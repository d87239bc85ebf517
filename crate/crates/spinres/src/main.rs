use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(spinres::cli::run() as u8)
}
