fn main() {
    std::process::exit(vlnmem::cli::main());
}
