fn main() {
    std::process::exit(ezmfg::cli::main_with_args(std::env::args_os()));
}
