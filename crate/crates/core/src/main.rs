fn main() {
    std::process::exit(stcos::cli::run(std::env::args_os()));
}
