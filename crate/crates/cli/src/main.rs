fn main() {
    std::process::exit(fusenet_cli::run(std::env::args_os()));
}
