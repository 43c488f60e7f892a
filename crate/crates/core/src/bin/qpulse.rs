fn main() {
    std::process::exit(qpulse::cli::run(std::env::args_os()));
}
