use std::collections::BTreeMap;
use std::fmt;

use super::Inventory;
use crate::drivers::DriverRegistry;
use crate::transport::LineSettings;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    NoHosts,
    DuplicateHostname { hostname: String, first: String },
    DuplicateSensorId { sensor_id: String, first: String },
    DuplicateSlaveAddress { port: String, slave: u8, first: String },
    UnknownSensorType { sensor_type: String, known: Vec<String> },
    IntervalTooShort { interval_s: u64, min_s: u64 },
    InvalidSerial { detail: String },
    SharedBusSerialConflict { port: String, line: LineSettings, other: LineSettings, first: String },
    InvalidOverride { detail: String },
}

/// A reason the inventory cannot be deployed, tied to the element at `path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::NoHosts => write!(f, "inventory declares no hosts"),
            ViolationKind::DuplicateHostname { hostname, first } => {
                write!(f, "duplicate hostname {hostname:?} (already used by {first})")
            }
            ViolationKind::DuplicateSensorId { sensor_id, first } => {
                write!(f, "duplicate sensor_id {sensor_id:?} (already used by {first})")
            }
            ViolationKind::DuplicateSlaveAddress { port, slave, first } => {
                write!(f, "duplicate slave address {slave} on {port} (already used by {first})")
            }
            ViolationKind::UnknownSensorType { sensor_type, known } => {
                write!(f, "unknown sensor_type {sensor_type:?} (known: {})", known.join(", "))
            }
            ViolationKind::IntervalTooShort { interval_s, min_s } => {
                write!(f, "interval {interval_s} s is below the driver minimum of {min_s} s")
            }
            ViolationKind::InvalidSerial { detail } => write!(f, "invalid serial settings: {detail}"),
            ViolationKind::SharedBusSerialConflict { port, line, other, first } => write!(
                f,
                "serial settings {line} conflict with {other} used by {first} on shared bus {port}"
            ),
            ViolationKind::InvalidOverride { detail } => write!(f, "invalid register override: {detail}"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}: {}", self.path, self.kind)
        }
    }
}

/// Every reason the inventory cannot be deployed. Empty means deployable.
pub fn validate_inventory(inv: &Inventory, registry: &DriverRegistry) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, kind| out.push(Violation { path, kind });
    if inv.hosts.is_empty() {
        push("hosts".into(), ViolationKind::NoHosts);
    }
    let mut hostnames: BTreeMap<&str, String> = BTreeMap::new();
    for (h, host) in inv.hosts.iter().enumerate() {
        let host_path = format!("hosts[{h}]");
        if let Some(first) = hostnames.get(host.hostname.as_str()) {
            push(
                host_path.clone(),
                ViolationKind::DuplicateHostname {
                    hostname: host.hostname.clone(),
                    first: first.clone(),
                },
            );
        } else {
            hostnames.insert(&host.hostname, host_path.clone());
        }

        let mut ids: BTreeMap<&str, String> = BTreeMap::new();
        let mut addresses: BTreeMap<(&str, u8), String> = BTreeMap::new();
        let mut bus_lines: BTreeMap<&str, (LineSettings, String)> = BTreeMap::new();
        for (s, sensor) in host.sensors.iter().enumerate() {
            let path = format!("{host_path}.sensors[{s}]");
            if let Some(first) = ids.get(sensor.sensor_id.as_str()) {
                push(
                    path.clone(),
                    ViolationKind::DuplicateSensorId {
                        sensor_id: sensor.sensor_id.clone(),
                        first: first.clone(),
                    },
                );
            } else {
                ids.insert(&sensor.sensor_id, path.clone());
            }

            let key = (sensor.port.as_str(), sensor.slave.get());
            if let Some(first) = addresses.get(&key) {
                push(
                    path.clone(),
                    ViolationKind::DuplicateSlaveAddress {
                        port: sensor.port.clone(),
                        slave: sensor.slave.get(),
                        first: first.clone(),
                    },
                );
            } else {
                addresses.insert(key, path.clone());
            }

            match registry.lookup(&sensor.sensor_type) {
                Ok(driver) => {
                    let min_s = driver.min_poll_interval.as_secs();
                    if sensor.interval < min_s {
                        push(
                            format!("{path}.interval"),
                            ViolationKind::IntervalTooShort {
                                interval_s: sensor.interval,
                                min_s,
                            },
                        );
                    }
                    if let Err(e) = driver.with_overrides(&sensor.registers) {
                        push(
                            format!("{path}.registers"),
                            ViolationKind::InvalidOverride { detail: e.to_string() },
                        );
                    }
                }
                Err(_) => push(
                    format!("{path}.sensor_type"),
                    ViolationKind::UnknownSensorType {
                        sensor_type: sensor.sensor_type.clone(),
                        known: registry.keys(),
                    },
                ),
            }

            match sensor.line_settings(registry) {
                Ok(line) => match bus_lines.get(sensor.port.as_str()) {
                    Some((other, first)) if *other != line => push(
                        format!("{path}.serial"),
                        ViolationKind::SharedBusSerialConflict {
                            port: sensor.port.clone(),
                            line,
                            other: *other,
                            first: first.clone(),
                        },
                    ),
                    Some(_) => {}
                    None => {
                        bus_lines.insert(&sensor.port, (line, path.clone()));
                    }
                },
                Err(e) => push(
                    format!("{path}.serial"),
                    ViolationKind::InvalidSerial { detail: e.to_string() },
                ),
            }
        }
    }
    out
}
