fn main() {
    std::process::exit(pidpbc_cli::run(std::env::args_os()));
}
