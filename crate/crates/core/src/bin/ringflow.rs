fn main() {
    std::process::exit(ringflow::cli::main_with_args(std::env::args_os()));
}
