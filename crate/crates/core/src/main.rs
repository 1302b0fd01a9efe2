fn main() {
    std::process::exit(tspbmc::cli::run(std::env::args_os()));
}
