fn main() {
    let code = claimcheck::cli::run(std::env::args());
    std::process::exit(code);
}
