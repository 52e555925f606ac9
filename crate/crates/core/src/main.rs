fn main() -> std::process::ExitCode {
    ktrlf::cli::main_with_args(std::env::args_os())
}
