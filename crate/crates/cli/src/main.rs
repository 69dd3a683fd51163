fn main() {
    std::process::exit(dr_cli::run(std::env::args_os()));
}
