fn main() {
    std::process::exit(ptsp::cli::dispatch(std::env::args_os()));
}
