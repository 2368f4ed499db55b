fn main() {
    std::process::exit(ptn_cli::run(std::env::args_os()));
}
