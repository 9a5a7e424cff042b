fn main() {
    std::process::exit(transfit::cli::run(std::env::args_os()));
}
