fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(ragcap::cli::main_with(argv));
}
