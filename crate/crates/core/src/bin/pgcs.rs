fn main() {
    std::process::exit(pgcs::cli::run(std::env::args_os()));
}
