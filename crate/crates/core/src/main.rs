fn main() {
    std::process::exit(userdp::cli::run(std::env::args_os()));
}
