fn main() {
    std::process::exit(enkbf::cli::dispatch(std::env::args_os()));
}
