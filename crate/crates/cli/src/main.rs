use clap::Parser;
use secrets_core::cli::{exit_code, run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
