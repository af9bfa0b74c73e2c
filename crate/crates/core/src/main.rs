fn main() {
    std::process::exit(cfrec::cli::run(std::env::args_os()));
}
