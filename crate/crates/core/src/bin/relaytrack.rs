fn main() {
    std::process::exit(relaytrack::cli::run_cli(std::env::args().collect()));
}
