fn main() {
    std::process::exit(backmarch::cli::run_from(std::env::args_os()));
}
