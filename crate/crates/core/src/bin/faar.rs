fn main() {
    std::process::exit(faar::cli::run());
}
