fn main() {
    std::process::exit(bellflow::cli::run(std::env::args_os()));
}
