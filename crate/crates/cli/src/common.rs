use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use modlog::clock::{Clock, SimClock, SystemClock};
use modlog::drivers::DriverRegistry;
use modlog::inventory::{parse_inventory, Inventory, SerialOverride};
use modlog::simulator::{Scenario, SharedBus, VirtualBus};
use modlog::transport::{open_endpoint, BackendSelector, Endpoint, LineSettings, Parity, SerialConfig, StopBits};
use serde_json::{json, Value};

use crate::{BusArgs, LineArgs, ParityArg};

/// Why a command could not finish. Domain failures exit 1, usage and
/// environment failures exit 2.
#[derive(Debug)]
pub enum Failure {
    Domain { message: String, detail: Value },
    Usage { message: String, detail: Value },
}

impl Failure {
    pub fn domain(message: impl Into<String>) -> Self {
        Failure::Domain {
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure::Usage {
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(self, detail: Value) -> Self {
        match self {
            Failure::Domain { message, .. } => Failure::Domain { message, detail },
            Failure::Usage { message, .. } => Failure::Usage { message, detail },
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Domain { .. } => 1,
            Failure::Usage { .. } => 2,
        }
    }
}

// a closed pipe (`modlog ... | head`) is not an error worth a panic
fn put(text: &str) {
    let mut stdout = io::stdout().lock();
    let _ = writeln!(stdout, "{text}").and_then(|_| stdout.flush());
}

pub struct Output {
    pub json: bool,
}

impl Output {
    /// Prints `text` or, in JSON mode, `doc`.
    pub fn emit(&self, text: impl FnOnce() -> String, doc: impl FnOnce() -> Value) {
        if self.json {
            put(&serde_json::to_string_pretty(&doc()).expect("json output"));
        } else {
            let text = text();
            if !text.is_empty() {
                put(text.trim_end_matches('\n'));
            }
        }
    }

    pub fn failure(&self, command: &str, failure: &Failure) {
        let (message, detail) = match failure {
            Failure::Domain { message, detail } | Failure::Usage { message, detail } => (message, detail),
        };
        if self.json {
            let mut doc = json!({
                "command": command,
                "ok": false,
                "exit_code": failure.code(),
                "error": message,
            });
            if !detail.is_null() {
                doc["detail"] = detail.clone();
            }
            put(&serde_json::to_string_pretty(&doc).expect("json output"));
        } else {
            eprintln!("error: {message}");
        }
    }
}

pub fn load_registry(dir: Option<&Path>) -> Result<DriverRegistry, Failure> {
    let mut registry = DriverRegistry::builtin();
    if let Some(dir) = dir {
        registry
            .load_dir(dir)
            .map_err(|e| Failure::usage(format!("loading drivers from {}: {e}", dir.display())))?;
    }
    Ok(registry)
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

pub fn load_inventory(path: &Path) -> Result<Inventory, Failure> {
    let text = read_text(path)?;
    parse_inventory(&text).map_err(|e| {
        Failure::usage(format!("{}: {e}", path.display())).with_detail(json!({ "path": e.path() }))
    })
}

/// `--host`, else the inventory's only host, else this machine's hostname.
pub fn pick_host(inv: &Inventory, host: Option<&str>) -> String {
    if let Some(h) = host {
        return h.to_string();
    }
    if let [only] = inv.hosts.as_slice() {
        return only.hostname.clone();
    }
    fs::read_to_string("/proc/sys/kernel/hostname")
        .map(|s| s.trim().to_string())
        .unwrap_or_default()
}

pub fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = read_text(path)?;
    Scenario::from_yaml(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

pub fn build_buses(
    scenario: &Scenario,
    clock: Arc<dyn Clock>,
    registry: &DriverRegistry,
) -> Result<BTreeMap<String, SharedBus>, Failure> {
    scenario
        .build(clock, registry)
        .map_err(|e| Failure::usage(e.to_string()))
}

impl LineArgs {
    pub fn apply(&self, base: LineSettings) -> Result<LineSettings, Failure> {
        let stop_bits = self
            .stop_bits
            .map(StopBits::try_from)
            .transpose()
            .map_err(|e| Failure::usage(e.to_string()))?;
        SerialOverride {
            baud: self.baud,
            parity: self.parity.map(|p| match p {
                ParityArg::None => Parity::None,
                ParityArg::Even => Parity::Even,
                ParityArg::Odd => Parity::Odd,
            }),
            stop_bits,
            byte_size: self.byte_size,
        }
        .merge_onto(base)
        .map_err(|e| Failure::usage(e.to_string()))
    }
}

/// Opens the bus named by `--port`/`--scenario`. For a scenario without
/// `--port`, its only bus is used (an empty scenario gives an empty bus).
pub fn open_bus(bus: &BusArgs, line: LineSettings, registry: &DriverRegistry) -> Result<Endpoint, Failure> {
    match &bus.scenario {
        Some(path) => {
            let scenario = load_scenario(path)?;
            let clock: Arc<dyn Clock> = Arc::new(SimClock::new(scenario.start.unwrap_or_else(chrono::Utc::now)));
            let buses = build_buses(&scenario, clock.clone(), registry)?;
            let (port, shared) = match (&bus.port, buses.len()) {
                (Some(p), _) => match buses.get(p) {
                    Some(b) => (p.clone(), b.clone()),
                    None => return Err(Failure::usage(format!("scenario has no bus on {p}"))),
                },
                (None, 0) => ("virtual".to_string(), VirtualBus::new(clock.clone()).shared()),
                (None, 1) => buses.into_iter().next().expect("one bus"),
                (None, _) => {
                    return Err(Failure::usage(format!(
                        "scenario has several buses ({}); choose one with --port",
                        buses.keys().cloned().collect::<Vec<_>>().join(", ")
                    )))
                }
            };
            open_endpoint(&SerialConfig::new(port, line), BackendSelector::Virtual(shared), clock)
                .map_err(|e| Failure::usage(e.to_string()))
        }
        None => {
            let port = bus.port.clone().expect("clap requires --port or --scenario");
            let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
            open_endpoint(&SerialConfig::new(port, line), BackendSelector::RealSerial, clock)
                .map_err(|e| Failure::usage(e.to_string()))
        }
    }
}
