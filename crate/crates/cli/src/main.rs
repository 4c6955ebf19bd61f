use clap::Parser;
use treecrop_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("treecrop: {e}");
        std::process::exit(e.exit_code());
    }
}
