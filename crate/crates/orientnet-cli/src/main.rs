fn main() {
    std::process::exit(orientnet_cli::run(std::env::args()));
}
