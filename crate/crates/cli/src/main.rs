fn main() {
    std::process::exit(panopose_cli::run(std::env::args_os()));
}
