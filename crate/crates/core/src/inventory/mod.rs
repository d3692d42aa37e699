//! The inventory file: hosts, their sensors, and everything needed to turn
//! them into logging tasks and service units.

mod unit;
mod validate;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::{DriverRegistry, RegisterOverride};
use crate::logger::{LoggingTask, TimestampPrecision};
use crate::modbus::SlaveAddress;
use crate::transport::{ConfigError, LineSettings, Parity, RetryPolicy, SerialConfig, StopBits};

pub use unit::{render_service_unit, service_unit_name};
pub use validate::{validate_inventory, Violation, ViolationKind};

pub const SUPPORTED_VERSIONS: &[u32] = &[1];
pub const DEFAULT_INTERVAL_S: u64 = 60;
pub const DEFAULT_OUTPUT_DIR: &str = "sensor_logging";

/// Annotated example shipped with the tool.
pub const EXAMPLE_INVENTORY: &str = include_str!("../../inventory/example.yaml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inventory {
    #[serde(default = "default_version")]
    pub version: u32,
    pub hosts: Vec<HostSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub hostname: String,
    pub address: String,
    pub username: String,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Rtu,
}

/// Serial fields given in the inventory; missing ones come from the driver.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerialOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baud: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parity: Option<Parity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_bits: Option<StopBits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_size: Option<u8>,
}

impl SerialOverride {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn merge_onto(&self, base: LineSettings) -> Result<LineSettings, ConfigError> {
        LineSettings::new(
            self.baud.unwrap_or(base.baud()),
            self.parity.unwrap_or(base.parity()),
            self.stop_bits.unwrap_or(base.stop_bits()),
            self.byte_size.unwrap_or(base.byte_size()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub sensor_id: String,
    pub sensor_type: String,
    pub port: String,
    pub slave: SlaveAddress,
    #[serde(default)]
    pub mode: Mode,
    /// Seconds between polls.
    #[serde(default = "default_interval")]
    pub interval: u64,
    #[serde(default, deserialize_with = "text::map")]
    pub tags: BTreeMap<String, String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "SerialOverride::is_empty")]
    pub serial: SerialOverride,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub timestamp_precision: TimestampPrecision,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub registers: BTreeMap<String, RegisterOverride>,
}

/// YAML reads `0`, `1.5` or `true` as non-strings; tag values accept any
/// plain scalar.
mod text {
    use std::collections::BTreeMap;
    use std::fmt;

    use serde::de::{self, Deserializer, MapAccess, Visitor};

    struct Text;

    impl<'de> Visitor<'de> for Text {
        type Value = String;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a string")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<String, E> {
            Ok(v.to_string())
        }

        fn visit_string<E: de::Error>(self, v: String) -> Result<String, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<String, E> {
            Ok(v.to_string())
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<String, E> {
            Ok(v.to_string())
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<String, E> {
            Ok(v.to_string())
        }

        fn visit_bool<E: de::Error>(self, v: bool) -> Result<String, E> {
            Ok(v.to_string())
        }
    }

    struct Owned(String);

    impl<'de> de::Deserialize<'de> for Owned {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            d.deserialize_any(Text).map(Owned)
        }
    }

    pub fn map<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, String>, D::Error> {
        struct Entries;

        impl<'de> Visitor<'de> for Entries {
            type Value = BTreeMap<String, String>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of strings")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut a: A) -> Result<Self::Value, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((Owned(k), Owned(v))) = a.next_entry()? {
                    out.insert(k, v);
                }
                Ok(out)
            }
        }

        d.deserialize_map(Entries)
    }
}

fn default_version() -> u32 {
    1
}

fn default_interval() -> u64 {
    DEFAULT_INTERVAL_S
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(DEFAULT_OUTPUT_DIR)
}

impl SensorSpec {
    /// Line settings after merging the inventory's serial block onto the
    /// driver defaults (19200 8E1 for unknown sensor types).
    pub fn line_settings(&self, registry: &DriverRegistry) -> Result<LineSettings, ConfigError> {
        let base = registry
            .lookup(&self.sensor_type)
            .map(|d| d.default_serial)
            .unwrap_or_default();
        self.serial.merge_onto(base)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InventoryError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{path}: unknown key {key:?}")]
    UnknownKey { path: String, key: String },
    #[error("{path}: missing required field")]
    MissingRequiredField { path: String },
    #[error("{path}: type mismatch: {message}")]
    TypeMismatch { path: String, message: String },
    #[error("{path}: invalid value: {message}")]
    InvalidValue { path: String, message: String },
}

impl InventoryError {
    pub fn path(&self) -> Option<&str> {
        match self {
            InventoryError::Syntax { .. } => None,
            InventoryError::UnknownKey { path, .. }
            | InventoryError::MissingRequiredField { path }
            | InventoryError::TypeMismatch { path, .. }
            | InventoryError::InvalidValue { path, .. } => Some(path),
        }
    }
}

fn backticked(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

fn join_path(parent: &str, child: &str) -> String {
    if parent.is_empty() || parent == "." {
        child.to_string()
    } else {
        format!("{parent}.{child}")
    }
}

fn classify(path: String, message: String) -> InventoryError {
    let path = if path == "." { String::new() } else { path };
    if message.starts_with("unknown field") {
        let key = backticked(&message).unwrap_or_default().to_string();
        // the path already ends in the offending key
        let parent = path
            .strip_suffix(&key)
            .map(|p| p.trim_end_matches('.').to_string())
            .unwrap_or(path);
        InventoryError::UnknownKey {
            path: join_path(&parent, &key),
            key,
        }
    } else if message.starts_with("missing field") {
        let field = backticked(&message).unwrap_or_default();
        InventoryError::MissingRequiredField {
            path: join_path(&path, field),
        }
    } else if message.starts_with("invalid type") {
        InventoryError::TypeMismatch { path, message }
    } else {
        InventoryError::InvalidValue { path, message }
    }
}

fn is_hostname(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

fn is_sensor_id(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

/// Parses an inventory document. Unknown keys are errors; every error names
/// the path of the offending element, e.g. `hosts[0].sensors[1].slave`.
pub fn parse_inventory(text: &str) -> Result<Inventory, InventoryError> {
    let value: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map_or((0, 0), |l| (l.line(), l.column()));
        InventoryError::Syntax {
            line,
            column,
            message: e.to_string(),
        }
    })?;
    if value.is_null() {
        return Err(InventoryError::MissingRequiredField { path: "hosts".into() });
    }
    let inv: Inventory = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        classify(path, e.into_inner().to_string())
    })?;
    check_fields(&inv)?;
    Ok(inv)
}

fn check_fields(inv: &Inventory) -> Result<(), InventoryError> {
    if !SUPPORTED_VERSIONS.contains(&inv.version) {
        return Err(InventoryError::InvalidValue {
            path: "version".into(),
            message: format!("unsupported inventory version {}", inv.version),
        });
    }
    for (h, host) in inv.hosts.iter().enumerate() {
        if !is_hostname(&host.hostname) {
            return Err(InventoryError::InvalidValue {
                path: format!("hosts[{h}].hostname"),
                message: format!("{:?} must match [a-z0-9-]+", host.hostname),
            });
        }
        for (s, sensor) in host.sensors.iter().enumerate() {
            let at = |field: &str| format!("hosts[{h}].sensors[{s}].{field}");
            if !is_sensor_id(&sensor.sensor_id) {
                return Err(InventoryError::InvalidValue {
                    path: at("sensor_id"),
                    message: format!("{:?} must match [a-z0-9_-]+", sensor.sensor_id),
                });
            }
            if sensor.interval == 0 {
                return Err(InventoryError::InvalidValue {
                    path: at("interval"),
                    message: "interval must be at least 1 second".into(),
                });
            }
            if sensor.port.is_empty() {
                return Err(InventoryError::InvalidValue {
                    path: at("port"),
                    message: "port must not be empty".into(),
                });
            }
        }
    }
    Ok(())
}

impl Inventory {
    /// Canonical YAML form: every default written out, keys in a fixed order.
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("inventory serializes")
    }

    pub fn host(&self, hostname: &str) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.hostname == hostname)
    }

    pub fn sensor_count(&self) -> usize {
        self.hosts.iter().map(|h| h.sensors.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("host {requested:?} is not in the inventory (known: {})", known.join(", "))]
    UnknownHost { requested: String, known: Vec<String> },
    #[error("inventory is not deployable: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid { violations: Vec<Violation> },
}

/// One fully resolved task per sensor of `hostname`, ordered by port, then
/// slave address.
pub fn plan_tasks(inv: &Inventory, hostname: &str, registry: &DriverRegistry) -> Result<Vec<LoggingTask>, PlanError> {
    let h = inv
        .hosts
        .iter()
        .position(|h| h.hostname == hostname)
        .ok_or_else(|| PlanError::UnknownHost {
            requested: hostname.into(),
            known: inv.hosts.iter().map(|h| h.hostname.clone()).collect(),
        })?;
    let prefix = format!("hosts[{h}]");
    let violations: Vec<Violation> = validate_inventory(inv, registry)
        .into_iter()
        .filter(|v| v.path == prefix || v.path.starts_with(&format!("{prefix}.")))
        .collect();
    if !violations.is_empty() {
        return Err(PlanError::Invalid { violations });
    }
    let mut tasks: Vec<LoggingTask> = inv.hosts[h]
        .sensors
        .iter()
        .map(|s| LoggingTask {
            sensor_id: s.sensor_id.clone(),
            sensor_type: s.sensor_type.to_ascii_lowercase(),
            slave: s.slave,
            serial: SerialConfig::new(
                s.port.clone(),
                s.line_settings(registry).expect("validated serial settings"),
            ),
            interval: Duration::from_secs(s.interval),
            tags: s.tags.clone(),
            output_dir: normalize(&s.output_dir),
            retry: s.retry,
            timestamp_precision: s.timestamp_precision,
            registers: s.registers.clone(),
        })
        .collect();
    tasks.sort_by(|a, b| (a.port(), a.slave).cmp(&(b.port(), b.slave)));
    Ok(tasks)
}

fn normalize(p: &std::path::Path) -> PathBuf {
    p.components().collect()
}
