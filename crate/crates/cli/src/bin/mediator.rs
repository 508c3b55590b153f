//! Standalone mediator: `mediator serve --listen <addr:port>`.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use slt_core::mediator::{self, MediatorConfig};

#[derive(Parser)]
#[command(
    name = "mediator",
    version,
    about = "Routes sessions between workers and clients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Serve {
        #[arg(long, env = "MEDIATOR_ADDR", default_value = "127.0.0.1:9999")]
        listen: String,
        #[arg(long, default_value_t = mediator::DEFAULT_QUEUE_CAPACITY)]
        queue: usize,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MEDIATOR_LOG", "info")).init();
    let Command::Serve { listen, queue } = Cli::parse().command;
    let config = MediatorConfig {
        queue_capacity: queue,
        ..MediatorConfig::default()
    };
    let handle =
        mediator::spawn(&listen, config).with_context(|| format!("listening on {listen}"))?;
    log::info!("mediator listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}
