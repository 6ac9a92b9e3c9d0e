fn main() {
    std::process::exit(lensforge_cli::cli_dispatch(std::env::args_os()));
}
