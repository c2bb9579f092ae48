fn main() {
    std::process::exit(robust_oag::cli::main_with_args(std::env::args_os()));
}
