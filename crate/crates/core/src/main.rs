fn main() -> std::process::ExitCode {
    synthaug::cli::main()
}
