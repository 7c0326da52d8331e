fn main() {
    std::process::exit(nmqsd_core::cli::run(std::env::args_os()));
}
