fn main() {
    std::process::exit(ergowave::experiments::cli::cli_main(std::env::args_os()));
}
