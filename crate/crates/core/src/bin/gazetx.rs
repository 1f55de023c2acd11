fn main() {
    std::process::exit(gazetx::cli::main());
}
