fn main() {
    std::process::exit(ssc_cli::run(std::env::args()));
}
