fn main() {
    std::process::exit(voltjump_cli::main_with(std::env::args_os()));
}
