fn main() {
    std::process::exit(dmpc_cli::cli_main(std::env::args_os()));
}
