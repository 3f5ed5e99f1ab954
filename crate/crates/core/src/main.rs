fn main() {
    std::process::exit(ctxmi::cli::run(std::env::args_os()));
}
