fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CROWDMARK_LOG", "warn")).init();
    std::process::exit(crowdmark::cli::run(std::env::args_os()));
}
