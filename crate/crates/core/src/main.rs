use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MLSGAN_LOG", "warn")).init();
    ExitCode::from(mlsgan::cli::main_with_args(std::env::args_os()))
}
