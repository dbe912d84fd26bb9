fn main() {
    std::process::exit(hemcts::cli::main_with_args(std::env::args_os()));
}
