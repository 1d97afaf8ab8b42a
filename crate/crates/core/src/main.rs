fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SADDLEKIT_LOG")).init();
    std::process::exit(saddlekit::cli::run_from_args(std::env::args_os()));
}
