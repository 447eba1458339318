fn main() {
    std::process::exit(aicp::cli::run(std::env::args_os()));
}
