fn main() {
    std::process::exit(laeo::cli::run(std::env::args_os()));
}
