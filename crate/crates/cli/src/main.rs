fn main() {
    std::process::exit(sfms_cli::run(std::env::args_os()));
}
