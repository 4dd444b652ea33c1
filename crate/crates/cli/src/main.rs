fn main() {
    std::process::exit(factorlens_cli::main_with(std::env::args_os()));
}
