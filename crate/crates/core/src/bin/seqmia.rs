fn main() {
    std::process::exit(seqmia::cli::run(std::env::args_os()));
}
