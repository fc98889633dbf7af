fn main() {
    std::process::exit(iirnn::cli::run(std::env::args_os()));
}
