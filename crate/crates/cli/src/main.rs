fn main() -> std::process::ExitCode {
    canvas_forge_cli::main(std::env::args().collect())
}
