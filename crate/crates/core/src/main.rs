fn main() {
    std::process::exit(gauss_conjunction::cli::main_with(std::env::args_os()));
}
