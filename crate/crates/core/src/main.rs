use clap::Parser;
use raman_squeeze::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(&cli));
}
