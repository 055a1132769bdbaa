fn main() {
    std::process::exit(semready::cli::run(std::env::args_os()));
}
