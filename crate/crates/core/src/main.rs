fn main() {
    std::process::exit(skelmap::cli::main());
}
