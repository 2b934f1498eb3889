fn main() {
    std::process::exit(depthkit::cli::run(std::env::args_os()));
}
