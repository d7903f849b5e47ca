fn main() {
    std::process::exit(ohflux::cli::main_with_args(std::env::args_os()));
}
