fn main() {
    std::process::exit(physdrift::cli::run_command(std::env::args_os()));
}
