fn main() {
    std::process::exit(mhadapter_core::cli::run(std::env::args_os()));
}
