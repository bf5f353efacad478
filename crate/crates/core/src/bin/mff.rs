fn main() {
    std::process::exit(mff_ftnet::cli::run(std::env::args().collect()));
}
