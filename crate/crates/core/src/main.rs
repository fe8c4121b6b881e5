fn main() {
    std::process::exit(nowcast::cli::main_with_args(std::env::args_os()));
}
