fn main() -> std::process::ExitCode {
    bacl::cli::main()
}
