fn main() {
    std::process::exit(pnph::cli::dispatch(std::env::args_os()));
}
