fn main() {
    std::process::exit(specpat::cli::run(std::env::args_os()));
}
