use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(itcsim::cli::run(std::env::args()) as u8)
}
