fn main() {
    std::process::exit(hopsum::cli::run(std::env::args()));
}
