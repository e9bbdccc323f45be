fn main() {
    std::process::exit(qnoise::cli::run(std::env::args_os()));
}
