fn main() {
    std::process::exit(adiabath::cli::main_with_args(std::env::args_os()));
}
