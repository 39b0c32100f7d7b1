fn main() {
    std::process::exit(rydspin::cli::run(std::env::args_os()));
}
