use clap::Parser;
use memsim_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("memsim {}: {e}", cli.command.name());
            std::process::exit(e.exit_code());
        }
    }
}
