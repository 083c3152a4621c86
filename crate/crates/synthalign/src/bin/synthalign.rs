fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(synthalign::cli::run(std::env::args_os()))
}
