fn main() {
    let code = cace::cli::main_with(std::env::args_os(), std::env::var("CACE_SEED").ok());
    std::process::exit(code);
}
