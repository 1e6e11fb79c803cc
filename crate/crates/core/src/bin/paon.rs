fn main() {
    std::process::exit(paon::cli::main_exit_code());
}
