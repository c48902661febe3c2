fn main() {
    std::process::exit(rbcbo::cli::main_with_args(std::env::args_os()));
}
