fn main() {
    std::process::exit(apsnet::cli::run(std::env::args_os()));
}
