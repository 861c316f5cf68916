fn main() {
    std::process::exit(evlot::cli::run_cli(std::env::args_os()));
}
