fn main() {
    std::process::exit(gpfir_cli::cli_main(std::env::args_os()));
}
