fn main() {
    std::process::exit(phasewave_cli::main_with(std::env::args_os()));
}
