use std::path::PathBuf;
use std::process::ExitCode;

use caster_cli::export::{export_file, ExportRequest};
use caster_cli::{conformance, simulate, CastingScenario, Client};
use caster_service::ServiceConfig;
use clap::{Parser, Subcommand};

const DEFAULT_URL: &str = "http://127.0.0.1:8080";

#[derive(Parser)]
#[command(name = "caster", version, about = "Timeseries platform for continuous-casting digital twins")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a casting run and post it to a running service.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = DEFAULT_URL)]
        url: String,
    },
    /// Probe a running service and print the R1-R10 fulfilment matrix.
    Conformance {
        #[arg(long, default_value = DEFAULT_URL)]
        url: String,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Export a series range to CSV.
    Export {
        #[arg(long)]
        series: String,
        /// Inclusive start: integer index or RFC 3339 timestamp.
        #[arg(long)]
        from: Option<String>,
        /// Exclusive end: integer index or RFC 3339 timestamp.
        #[arg(long)]
        to: Option<String>,
        /// Comma-separated channel subset.
        #[arg(long, value_delimiter = ',')]
        channels: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_URL)]
        url: String,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match command {
        Command::Serve { config } => {
            let config = ServiceConfig::load(&config)?;
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(caster_service::serve(config))?;
        }
        Command::Simulate { scenario, url } => {
            let scenario = CastingScenario::load(&scenario)?;
            let report = simulate::simulate(&Client::new(&url), &scenario)?;
            println!("{report}");
            println!("billets announced: {}", report.billets.join(", "));
        }
        Command::Conformance { url, json } => {
            let report = conformance::run(&url);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{report}");
            }
            if report.fulfilled() != report.requirements.len() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Export { series, from, to, channels, out, url } => {
            let req = ExportRequest { series, from, to, channels };
            let rows = export_file(&Client::new(&url), &req, &out)?;
            eprintln!("wrote {rows} rows to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
