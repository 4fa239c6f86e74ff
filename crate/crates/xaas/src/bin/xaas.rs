fn main() -> std::process::ExitCode {
    xaas::cli::main()
}
