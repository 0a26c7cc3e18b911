fn main() {
    std::process::exit(langreach::cli::run(std::env::args_os()));
}
