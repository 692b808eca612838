fn main() {
    std::process::exit(cgsc::cli::main());
}
