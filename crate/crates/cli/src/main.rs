fn main() {
    std::process::exit(dcone_cli::run(std::env::args_os()));
}
