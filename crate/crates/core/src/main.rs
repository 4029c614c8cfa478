fn main() {
    std::process::exit(framelab::cli::run_from(std::env::args_os()));
}
