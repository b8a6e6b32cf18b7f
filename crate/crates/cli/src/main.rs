fn main() {
    std::process::exit(ssd_cli::cli_main(std::env::args_os()));
}
