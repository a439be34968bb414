fn main() {
    std::process::exit(cvboot::cli::run(std::env::args_os()));
}
