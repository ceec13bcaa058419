use clap::Parser;
use strokeforge::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(strokeforge::exit_code(&err));
    }
}
