use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(miner::cli::run() as u8)
}
