fn main() -> std::process::ExitCode {
    optswitch::cli::main_from_env()
}
