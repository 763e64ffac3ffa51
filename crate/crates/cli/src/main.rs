fn main() {
    std::process::exit(vsl_cli::cli_main(std::env::args_os()));
}
