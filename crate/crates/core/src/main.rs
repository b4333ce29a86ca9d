fn main() {
    std::process::exit(syncgan::cli::run(std::env::args_os()));
}
