fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CRYOCARE_LOG", "info"))
        .format_timestamp(None)
        .init();
    std::process::exit(cryocare::cli::main_with_args(std::env::args_os()));
}
