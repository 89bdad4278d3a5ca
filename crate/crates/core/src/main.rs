fn main() {
    std::process::exit(langvec::cli::run(std::env::args_os()));
}
