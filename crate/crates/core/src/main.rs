fn main() {
    std::process::exit(sfl_core::cli::run(std::env::args_os()));
}
