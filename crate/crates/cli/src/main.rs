fn main() {
    std::process::exit(gazelab_cli::run(std::env::args_os()));
}
