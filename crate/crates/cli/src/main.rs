fn main() {
    std::process::exit(delaydop_cli::run_command(std::env::args_os()));
}
