fn main() {
    env_logger::init();
    std::process::exit(llmlab::cli::run(std::env::args_os()));
}
