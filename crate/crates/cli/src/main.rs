use clap::Parser;
use i2cr_cli::{run, Cli};
use tracing_subscriber::EnvFilter;

fn main() {
    let cli = Cli::parse();
    let default_level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)),
        )
        .init();
    let args: Vec<String> = std::env::args().collect();
    let mut stdout = std::io::stdout().lock();
    if let Err(err) = run(cli, args, std::env::vars(), &mut stdout) {
        eprintln!("i2cr: {err}");
        std::process::exit(err.exit_code());
    }
}
