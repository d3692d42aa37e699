use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::descriptor::{DriverDescriptor, RegisterMapping};
use crate::modbus::{build_read_request, decode_value, parse_response, RequestPdu, SlaveAddress};
use crate::transport::{Endpoint, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadingStatus {
    Ok,
    #[serde(rename = "partial")]
    PartialFailure,
    Failed,
}

impl ReadingStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReadingStatus::Ok => "ok",
            ReadingStatus::PartialFailure => "partial",
            ReadingStatus::Failed => "failed",
        }
    }
}

impl fmt::Display for ReadingStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub unit: String,
}

/// Result of polling every mapping of one sensor once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub sensor_id: String,
    pub timestamp: DateTime<Utc>,
    pub values: BTreeMap<String, Measurement>,
    pub status: ReadingStatus,
    pub error_detail: Option<String>,
}

impl Reading {
    pub fn failed(sensor_id: &str, timestamp: DateTime<Utc>, detail: impl Into<String>) -> Self {
        Self {
            sensor_id: sensor_id.to_string(),
            timestamp,
            values: BTreeMap::new(),
            status: ReadingStatus::Failed,
            error_detail: Some(detail.into()),
        }
    }
}

fn read_mapping(
    mapping: &RegisterMapping,
    descriptor: &DriverDescriptor,
    endpoint: &mut Endpoint,
    slave: SlaveAddress,
    policy: &RetryPolicy,
) -> Result<f64, String> {
    let pdu = RequestPdu::new(slave, mapping.function, mapping.register, mapping.codec.words())
        .map_err(|e| e.to_string())?;
    let reply = endpoint
        .transact(&build_read_request(&pdu), policy)
        .map_err(|e| e.to_string())?;
    let response = parse_response(&reply, &pdu).map_err(|e| e.to_string())?;
    let mut value = decode_value(&response.words, &mapping.codec).map_err(|e| e.to_string())?;
    if let Some(t) = &mapping.transform {
        value = t.apply(value);
    }
    if let Some(hook) = &descriptor.hook {
        value = hook(&mapping.name, value);
    }
    if !value.is_finite() {
        return Err(format!("post-processed value is not finite ({value})"));
    }
    Ok(value)
}

/// Reads every mapping of `descriptor` from `slave`, one transaction each.
///
/// Never fails: per-mapping errors degrade the status to partial, and a
/// reading with no values at all is failed. The timestamp is taken when the
/// first request goes out.
pub fn read_sensor(
    sensor_id: &str,
    descriptor: &DriverDescriptor,
    endpoint: &mut Endpoint,
    slave: SlaveAddress,
    policy: &RetryPolicy,
) -> Reading {
    let timestamp = endpoint.clock().utc();
    let mut values = BTreeMap::new();
    let mut errors = Vec::new();
    for mapping in &descriptor.mappings {
        match read_mapping(mapping, descriptor, endpoint, slave, policy) {
            Ok(value) => {
                values.insert(
                    mapping.name.clone(),
                    Measurement {
                        value,
                        unit: mapping.unit.clone(),
                    },
                );
            }
            Err(e) => errors.push(format!("{}: {e}", mapping.name)),
        }
    }
    let status = if errors.is_empty() {
        ReadingStatus::Ok
    } else if values.is_empty() {
        ReadingStatus::Failed
    } else {
        ReadingStatus::PartialFailure
    };
    Reading {
        sensor_id: sensor_id.to_string(),
        timestamp,
        values,
        status,
        error_detail: (!errors.is_empty()).then(|| errors.join("; ")),
    }
}
