//! Periodic polling, shared-bus coordination, and daily CSV files with a
//! JSON metadata sidecar.

mod csv;
mod metadata;
mod service;

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::RegisterOverride;
use crate::modbus::SlaveAddress;
use crate::transport::{RetryPolicy, SerialConfig};

pub use self::csv::{
    csv_header, format_timestamp, format_value, recover_file, resolve_output_path, CsvSink,
    RecoveredFile,
};
pub use metadata::{metadata_path, write_metadata, MetadataDocument, METADATA_SCHEMA_VERSION};
pub use service::{
    run_logging_service, BusCoordinator, PortOpener, RealPorts, RunSummary, ServiceOptions,
    TaskSummary, VirtualPorts,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampPrecision {
    #[default]
    Seconds,
    Millis,
}

/// Everything needed to log one sensor, fully resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggingTask {
    pub sensor_id: String,
    pub sensor_type: String,
    pub slave: SlaveAddress,
    pub serial: SerialConfig,
    #[serde(with = "secs")]
    pub interval: Duration,
    pub tags: BTreeMap<String, String>,
    pub output_dir: PathBuf,
    pub retry: RetryPolicy,
    pub timestamp_precision: TimestampPrecision,
    pub registers: BTreeMap<String, RegisterOverride>,
}

impl LoggingTask {
    pub fn port(&self) -> &str {
        &self.serial.port
    }
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StorageError {
    #[error("storage full writing {path}")]
    StorageFull { path: PathBuf },
    #[error("permission denied writing {path}")]
    PermissionDenied { path: PathBuf },
    #[error("I/O error on {path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

const ENOSPC: i32 = 28;

impl StorageError {
    pub(crate) fn from_io(path: impl Into<PathBuf>, e: io::Error) -> Self {
        let path = path.into();
        if e.kind() == io::ErrorKind::StorageFull || e.raw_os_error() == Some(ENOSPC) {
            StorageError::StorageFull { path }
        } else if e.kind() == io::ErrorKind::PermissionDenied {
            StorageError::PermissionDenied { path }
        } else {
            StorageError::Io {
                path,
                detail: e.to_string(),
            }
        }
    }
}
