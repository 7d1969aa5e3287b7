fn main() -> std::process::ExitCode {
    umaea_cli::app::main_with_args(std::env::args_os())
}
