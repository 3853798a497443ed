fn main() {
    std::process::exit(readout_cli::run(std::env::args_os()));
}
