fn main() {
    std::process::exit(rau_cli::run_from_args(std::env::args_os()));
}
