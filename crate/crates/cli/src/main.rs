fn main() {
    std::process::exit(qaware_cli::main_with_args(std::env::args_os()));
}
