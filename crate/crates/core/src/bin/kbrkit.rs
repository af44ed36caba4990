use std::process::ExitCode;

fn main() -> ExitCode {
    let env_seed = std::env::var(kbrkit::cli::SEED_ENV).ok();
    ExitCode::from(kbrkit::cli::run(std::env::args_os(), env_seed.as_deref()))
}
