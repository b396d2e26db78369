fn main() {
    std::process::exit(ngtm_cli::run(std::env::args_os()));
}
