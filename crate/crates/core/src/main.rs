fn main() -> std::process::ExitCode {
    emission_cpd::cli::main_with_args(std::env::args_os())
}
