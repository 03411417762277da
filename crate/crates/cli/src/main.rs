use clap::Parser;
use exdiff::cli::{dispatch, Cli};

fn main() {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(line) => println!("{line}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
