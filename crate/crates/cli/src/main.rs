fn main() {
    std::process::exit(apple_cli::run(std::env::args_os()));
}
