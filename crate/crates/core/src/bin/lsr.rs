fn main() {
    std::process::exit(lsr::cli::main_with_args(std::env::args_os()));
}
