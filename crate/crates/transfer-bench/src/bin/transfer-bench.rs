use std::process::ExitCode;

fn main() -> ExitCode {
    transfer_bench::cli::main()
}
