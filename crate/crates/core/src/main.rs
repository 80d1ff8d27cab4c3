fn main() -> std::process::ExitCode {
    densjump::cli::main()
}
