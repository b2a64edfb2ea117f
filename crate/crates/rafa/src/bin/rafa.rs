fn main() {
    std::process::exit(rafa::cli::run());
}
