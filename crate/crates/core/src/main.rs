fn main() {
    std::process::exit(sbmlab::cli::run(std::env::args_os()));
}
