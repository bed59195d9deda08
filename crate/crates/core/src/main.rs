fn main() {
    std::process::exit(omcl_core::cli::run(std::env::args_os()));
}
