fn main() {
    std::process::exit(fracsde::cli::dispatch(std::env::args_os()));
}
