fn main() {
    env_logger::init();
    std::process::exit(ccodec_cli::run(std::env::args_os()));
}
