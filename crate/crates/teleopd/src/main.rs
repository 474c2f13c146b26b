fn main() {
    std::process::exit(teleopd::cli::run(std::env::args_os()));
}
