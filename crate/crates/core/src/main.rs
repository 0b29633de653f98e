fn main() {
    std::process::exit(cached_dfl::cli::main_with_args(std::env::args_os()));
}
