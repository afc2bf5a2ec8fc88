fn main() {
    std::process::exit(cvtp_cli::commands::main_with_args(std::env::args_os()));
}
