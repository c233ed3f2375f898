fn main() {
    std::process::exit(vrloop::cli::run());
}
