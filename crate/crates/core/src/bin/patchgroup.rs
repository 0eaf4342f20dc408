fn main() {
    std::process::exit(patchgroup::cli::run(std::env::args_os()));
}
