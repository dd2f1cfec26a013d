use std::io::Write;

use clap::Parser;
use quiz_service::cli::{run, Cli, Command};
use quiz_service::ServiceConfig;
use tracing_subscriber::EnvFilter;

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { config } => {
            let config = ServiceConfig::load(config)?;
            tokio::runtime::Runtime::new()?.block_on(quiz_service::serve(config))
        }
        command => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            run(command, &mut out)?;
            out.flush()?;
            Ok(())
        }
    }
}
