fn main() -> std::process::ExitCode {
    weaver::cli::main()
}
