fn main() {
    std::process::exit(seqplace::cli::main_with_args(std::env::args_os()));
}
