fn main() {
    std::process::exit(groupnewton_cli::run_cli(std::env::args_os()));
}
