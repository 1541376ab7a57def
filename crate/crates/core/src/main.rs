fn main() {
    std::process::exit(permopt::cli::main_with_args(std::env::args_os()));
}
