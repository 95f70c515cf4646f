use std::process::ExitCode;

fn main() -> ExitCode {
    wranksim::cli::main()
}
