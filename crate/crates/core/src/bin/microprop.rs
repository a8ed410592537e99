fn main() {
    std::process::exit(microprop::cli::main_with_args(std::env::args_os()));
}
