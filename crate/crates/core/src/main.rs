fn main() -> std::process::ExitCode {
    spanqa::cli::main_entry()
}
