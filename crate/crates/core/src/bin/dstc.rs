fn main() {
    std::process::exit(dst_core::cli::run(std::env::args_os()));
}
