fn main() {
    std::process::exit(dualsolve::cli::run_command(std::env::args_os()));
}
