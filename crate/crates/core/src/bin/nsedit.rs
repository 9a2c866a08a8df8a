fn main() {
    std::process::exit(nsedit::cli::run(std::env::args_os()));
}
