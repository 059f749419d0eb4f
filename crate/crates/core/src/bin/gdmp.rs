fn main() {
    std::process::exit(gdmp::cli::run(std::env::args_os()));
}
