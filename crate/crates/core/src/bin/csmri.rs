fn main() {
    std::process::exit(csmri::cli::dispatch(std::env::args_os()));
}
