fn main() {
    std::process::exit(lmcl_cli::run_from(std::env::args_os()));
}
