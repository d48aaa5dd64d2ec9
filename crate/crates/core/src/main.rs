use std::process::ExitCode;

fn main() -> ExitCode {
    subgroup_fusion::cli::run(std::env::args_os())
}
