fn main() {
    std::process::exit(dualsig::cli::run(std::env::args_os()));
}
