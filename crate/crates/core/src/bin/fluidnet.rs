fn main() {
    std::process::exit(fluidnet::cli::main_with_args(std::env::args_os()));
}
