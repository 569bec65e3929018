fn main() {
    std::process::exit(dualmoco_cli::run_command(std::env::args_os()));
}
