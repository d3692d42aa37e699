mod commands;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use common::Output;

/// Modbus RTU sensor logger.
#[derive(Debug, Parser)]
#[command(name = "modlog", version, about)]
struct Cli {
    /// Print one JSON document on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,

    /// Extra directory of driver descriptors (*.yaml).
    #[arg(long, global = true, value_name = "DIR")]
    drivers_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check an inventory file.
    Validate(ValidateArgs),
    /// Probe a bus for responding slave addresses.
    Scan(ScanArgs),
    /// Read one sensor once and print its measurements.
    Read(ReadArgs),
    /// Log every sensor of a host.
    Run(RunArgs),
    /// Inspect a simulator scenario or send it a raw frame.
    Simulate(SimulateArgs),
    /// Render the systemd unit for a host.
    GenService(GenServiceArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(short, long)]
    inventory: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParityArg {
    None,
    Even,
    Odd,
}

#[derive(Debug, Default, Args)]
struct LineArgs {
    #[arg(long)]
    baud: Option<u32>,
    #[arg(long, value_enum)]
    parity: Option<ParityArg>,
    #[arg(long)]
    stop_bits: Option<u8>,
    #[arg(long)]
    byte_size: Option<u8>,
}

#[derive(Debug, Args)]
#[group(id = "bus", required = true, multiple = true)]
struct BusArgs {
    /// Serial device to use.
    #[arg(long, group = "bus")]
    port: Option<String>,
    /// Simulator scenario to use instead of hardware.
    #[arg(long, group = "bus")]
    scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[command(flatten)]
    bus: BusArgs,
    #[command(flatten)]
    line: LineArgs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=247))]
    from: u8,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u8).range(1..=247))]
    to: u8,
    /// Scan every address, 1 to 247.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    full: bool,
    #[arg(long, default_value_t = 100)]
    timeout_ms: u64,
}

#[derive(Debug, Args)]
struct ReadArgs {
    #[arg(long)]
    sensor_type: String,
    #[arg(long)]
    slave: u8,
    #[command(flatten)]
    bus: BusArgs,
    #[command(flatten)]
    line: LineArgs,
    #[arg(long, default_value_t = 3)]
    attempts: u8,
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(short, long)]
    inventory: PathBuf,
    /// Host to run; defaults to the only host, else this machine's hostname.
    #[arg(long)]
    host: Option<String>,
    /// Stop after this long, e.g. "60s" or "24h".
    #[arg(long, value_parser = humantime::parse_duration)]
    duration: Option<std::time::Duration>,
    /// Bind ports to a simulated bus.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Simulated clock origin (RFC 3339); defaults to the scenario's start.
    #[arg(long, requires = "scenario")]
    sim_start: Option<chrono::DateTime<chrono::Utc>>,
    /// Run a scenario in real time instead of simulated time.
    #[arg(long, requires = "scenario", conflicts_with = "sim_start")]
    realtime: bool,
    /// fsync every row.
    #[arg(long)]
    sync: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Bus to address when the scenario has several.
    #[arg(long)]
    port: Option<String>,
    /// Request frame in hex, e.g. "01 03 00 00 00 02 C4 0B".
    #[arg(long)]
    frame: Option<String>,
    /// Simulated time at which the frame is sent.
    #[arg(long, value_parser = humantime::parse_duration, requires = "frame")]
    at: Option<std::time::Duration>,
}

#[derive(Debug, Args)]
struct GenServiceArgs {
    #[arg(short, long)]
    inventory: PathBuf,
    #[arg(long)]
    host: Option<String>,
    /// Path of the modlog executable on the target host.
    #[arg(long, default_value = "/usr/local/bin/modlog")]
    exec: String,
    #[arg(long, default_value = "/home/pi")]
    working_dir: String,
    /// Inventory path on the target host; defaults to the given inventory's absolute path.
    #[arg(long)]
    remote_inventory: Option<String>,
    /// Directory to write the unit into; prints it otherwise.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn init_logging() {
    let level = match std::env::var("MODLOG_LOG_LEVEL").as_deref().map(str::trim) {
        Ok("error") => tracing::Level::ERROR,
        Ok("info") => tracing::Level::INFO,
        Ok("debug") => tracing::Level::DEBUG,
        Ok("trace") => tracing::Level::TRACE,
        _ => tracing::Level::WARN,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let out = Output { json: cli.json };
    let name = match &cli.command {
        Command::Validate(_) => "validate",
        Command::Scan(_) => "scan",
        Command::Read(_) => "read",
        Command::Run(_) => "run",
        Command::Simulate(_) => "simulate",
        Command::GenService(_) => "gen-service",
    };
    let result = common::load_registry(cli.drivers_dir.as_deref()).and_then(|registry| match cli.command {
        Command::Validate(a) => commands::validate(&a, &registry, &out),
        Command::Scan(a) => commands::scan(&a, &registry, &out),
        Command::Read(a) => commands::read(&a, &registry, &out),
        Command::Run(a) => commands::run(&a, &registry, &out),
        Command::Simulate(a) => commands::simulate(&a, &registry, &out),
        Command::GenService(a) => commands::gen_service(&a, &registry, &out),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            out.failure(name, &failure);
            ExitCode::from(failure.code())
        }
    }
}
