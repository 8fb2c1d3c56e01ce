fn main() {
    std::process::exit(cacps_cli::run(std::env::args_os()));
}
