fn main() {
    std::process::exit(stelar::cli::main_with_args(std::env::args_os()));
}
