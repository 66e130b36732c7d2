fn main() {
    std::process::exit(mixgop_cli::run(std::env::args_os()));
}
