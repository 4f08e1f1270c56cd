fn main() -> std::process::ExitCode {
    speccfi::cli::main()
}
