use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{LoggingTask, StorageError, TimestampPrecision};
use crate::drivers::DriverDescriptor;
use crate::transport::LineSettings;

pub const METADATA_SCHEMA_VERSION: u32 = 1;

const RECOVERY_POLICY: &str = "rows are written whole and flushed; on start a trailing partial line is truncated and rows not newer than the last timestamp are skipped";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataDocument {
    pub schema_version: u32,
    pub sensor_id: String,
    pub sensor_type: String,
    pub driver: serde_json::Value,
    pub port: String,
    pub serial: LineSettings,
    pub slave: u8,
    pub interval_s: u64,
    pub tags: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub units: BTreeMap<String, String>,
    pub timestamp_format: String,
    pub timestamp_precision: TimestampPrecision,
    pub recovery_policy: String,
    pub created_at: String,
    pub software_version: String,
}

impl MetadataDocument {
    pub fn new(task: &LoggingTask, descriptor: &DriverDescriptor, created_at: DateTime<Utc>) -> Self {
        let timestamp_format = match task.timestamp_precision {
            TimestampPrecision::Seconds => "YYYY-MM-DDTHH:MM:SSZ",
            TimestampPrecision::Millis => "YYYY-MM-DDTHH:MM:SS.sssZ",
        };
        Self {
            schema_version: METADATA_SCHEMA_VERSION,
            sensor_id: task.sensor_id.clone(),
            sensor_type: descriptor.sensor_type.clone(),
            driver: serde_json::to_value(descriptor).expect("descriptor serializes"),
            port: task.serial.port.clone(),
            serial: task.serial.line.clone(),
            slave: task.slave.get(),
            interval_s: task.interval.as_secs(),
            tags: task.tags.clone(),
            columns: descriptor.measurement_names(),
            units: descriptor.units(),
            timestamp_format: timestamp_format.into(),
            timestamp_precision: task.timestamp_precision,
            recovery_policy: RECOVERY_POLICY.into(),
            created_at: created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
            software_version: crate::SOFTWARE_VERSION.into(),
        }
    }

    fn same_config(&self, other: &Self) -> bool {
        Self {
            created_at: String::new(),
            ..self.clone()
        } == Self {
            created_at: String::new(),
            ..other.clone()
        }
    }
}

pub fn metadata_path(base: &Path, sensor_id: &str) -> PathBuf {
    base.join("data").join(sensor_id).join("metadata.json")
}

/// Writes `metadata.json` next to the sensor's CSV files. An existing file
/// describing the same configuration is left untouched, so reruns are
/// byte-stable; otherwise it is replaced atomically.
pub fn write_metadata(
    task: &LoggingTask,
    descriptor: &DriverDescriptor,
    created_at: DateTime<Utc>,
) -> Result<PathBuf, StorageError> {
    let path = metadata_path(&task.output_dir, &task.sensor_id);
    let dir = path.parent().expect("metadata path has a parent");
    fs::create_dir_all(dir).map_err(|e| StorageError::from_io(dir, e))?;
    let doc = MetadataDocument::new(task, descriptor, created_at);
    if let Ok(existing) = fs::read(&path) {
        if let Ok(old) = serde_json::from_slice::<MetadataDocument>(&existing) {
            if old.same_config(&doc) {
                return Ok(path);
            }
        }
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("metadata serializes");
    text.push('\n');
    let tmp = dir.join(".metadata.json.tmp");
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(text.as_bytes())?;
            f.sync_data()
        })
        .and_then(|_| fs::rename(&tmp, &path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(StorageError::from_io(&path, e));
    }
    Ok(path)
}
