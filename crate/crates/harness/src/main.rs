use clap::Parser;
use resil_harness::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = std::panic::catch_unwind(|| run(cli)).unwrap_or(4);
    std::process::exit(code);
}
