fn main() -> std::process::ExitCode {
    gsplan::cli::main_with(std::env::args_os())
}
