fn main() {
    std::process::exit(taskrep_cli::run(std::env::args().collect()));
}
