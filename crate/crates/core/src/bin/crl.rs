fn main() {
    std::process::exit(crl_core::cli::main_from(std::env::args_os()));
}
