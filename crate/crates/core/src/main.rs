fn main() {
    std::process::exit(mixalign::cli::run(std::env::args_os()));
}
