fn main() {
    std::process::exit(attnboost::run_command(std::env::args_os()));
}
