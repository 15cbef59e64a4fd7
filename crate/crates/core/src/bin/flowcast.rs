fn main() {
    std::process::exit(flowcast::cli::main_with_args(std::env::args_os()));
}
