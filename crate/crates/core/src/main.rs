fn main() {
    std::process::exit(feenet::cli::main_with_args(std::env::args_os()));
}
