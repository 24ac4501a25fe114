fn main() {
    std::process::exit(tacitree::cli::main_with_args(std::env::args_os()));
}
