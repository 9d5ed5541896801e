fn main() {
    std::process::exit(crl_core::cli::main());
}
