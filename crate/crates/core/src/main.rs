fn main() {
    std::process::exit(skelgp::cli::main_with_args(std::env::args_os()));
}
