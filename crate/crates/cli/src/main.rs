mod args;
mod commands;
mod failure;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(f) = commands::run(cli.command) {
        eprintln!("error: {f}");
        std::process::exit(f.exit_code());
    }
}
