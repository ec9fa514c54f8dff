fn main() {
    std::process::exit(onenet::cli::run(std::env::args_os()));
}
