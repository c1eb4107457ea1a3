fn main() -> std::process::ExitCode {
    drsentinel::cli::main()
}
