fn main() {
    std::process::exit(dfm::cli::run(std::env::args_os()));
}
