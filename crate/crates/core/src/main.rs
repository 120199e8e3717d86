fn main() {
    std::process::exit(lobtree::cli::main_with_args(std::env::args_os()));
}
