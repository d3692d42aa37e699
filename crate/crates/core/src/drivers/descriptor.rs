use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modbus::{DataType, FunctionCode, ValueCodec, WordOrder};
use crate::transport::LineSettings;
use crate::Codec;

/// Optional polynomial applied after decoding: `c0 + c1*x + c2*x^2 + ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    Polynomial { coefficients: Vec<f64> },
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Transform::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
        }
    }
}

/// One named measurement and where it lives in the register map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMapping", into = "RawMapping")]
pub struct RegisterMapping {
    pub name: String,
    pub function: FunctionCode,
    pub register: u16,
    pub codec: Codec,
    pub unit: String,
    pub provenance: Option<String>,
    pub transform: Option<Transform>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMapping {
    name: String,
    function: FunctionCode,
    register: u16,
    datatype: DataType,
    #[serde(default)]
    word_order: WordOrder,
    #[serde(default = "one")]
    scale: f64,
    #[serde(default)]
    offset: f64,
    unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transform: Option<Transform>,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawMapping> for RegisterMapping {
    type Error = crate::modbus::CodecError;

    fn try_from(r: RawMapping) -> Result<Self, Self::Error> {
        Ok(RegisterMapping {
            codec: ValueCodec::new(r.datatype, r.word_order, r.scale, r.offset)?,
            name: r.name,
            function: r.function,
            register: r.register,
            unit: r.unit,
            provenance: r.provenance,
            transform: r.transform,
        })
    }
}

impl From<RegisterMapping> for RawMapping {
    fn from(m: RegisterMapping) -> Self {
        RawMapping {
            name: m.name,
            function: m.function,
            register: m.register,
            datatype: m.codec.datatype(),
            word_order: m.codec.word_order(),
            scale: m.codec.scale(),
            offset: m.codec.offset(),
            unit: m.unit,
            provenance: m.provenance,
            transform: m.transform,
        }
    }
}

impl RegisterMapping {
    pub fn new(name: &str, function: FunctionCode, register: u16, codec: Codec, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            function,
            register,
            codec,
            unit: unit.to_string(),
            provenance: None,
            transform: None,
        }
    }

    /// Registers covered, as a half-open range that may end at 65536.
    pub fn span(&self) -> std::ops::Range<u32> {
        let start = self.register as u32;
        start..start + self.codec.words() as u32
    }
}

/// Per-sensor post-processing hook: `(measurement name, value) -> value`.
pub type ValueHook = Arc<dyn Fn(&str, f64) -> f64 + Send + Sync>;

/// A sensor model as data: its register map, units and serial defaults.
#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverDescriptor {
    pub sensor_type: String,
    pub display_name: String,
    #[serde(rename = "serial")]
    pub default_serial: LineSettings,
    #[serde(rename = "min_poll_interval_s", with = "secs")]
    pub min_poll_interval: Duration,
    pub mappings: Vec<RegisterMapping>,
    #[serde(skip)]
    pub hook: Option<ValueHook>,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_secs)
    }
}

impl fmt::Debug for DriverDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverDescriptor")
            .field("sensor_type", &self.sensor_type)
            .field("display_name", &self.display_name)
            .field("default_serial", &self.default_serial)
            .field("min_poll_interval", &self.min_poll_interval)
            .field("mappings", &self.mappings)
            .field("hook", &self.hook.is_some())
            .finish()
    }
}

impl PartialEq for DriverDescriptor {
    fn eq(&self, other: &Self) -> bool {
        self.sensor_type == other.sensor_type
            && self.display_name == other.display_name
            && self.default_serial == other.default_serial
            && self.min_poll_interval == other.min_poll_interval
            && self.mappings == other.mappings
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescriptorViolation {
    #[error("sensor_type {0:?} must match [a-z0-9_]+")]
    InvalidSensorType(String),
    #[error("descriptor has no mappings")]
    NoMappings,
    #[error("mapping {mapping:?}: name must be non-empty and match [a-z0-9_]+")]
    InvalidName { mapping: String },
    #[error("mapping {mapping:?}: duplicate name")]
    DuplicateName { mapping: String },
    #[error("mapping {mapping:?}: unit must not be empty")]
    EmptyUnit { mapping: String },
    #[error("mapping {mapping:?}: registers run past 0xFFFF")]
    RegisterOverflow { mapping: String },
    #[error("mappings {first:?} and {second:?} overlap on {function} registers")]
    OverlappingRegisters {
        first: String,
        second: String,
        function: FunctionCode,
    },
    #[error("min_poll_interval must be at least 1 s")]
    PollIntervalTooShort,
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Per-measurement register override supplied from the inventory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub register: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<FunctionCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_order: Option<WordOrder>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverrideError {
    #[error("no measurement named {name:?} in driver {sensor_type}")]
    UnknownMeasurement { sensor_type: String, name: String },
    #[error("overridden register map is invalid: {0}")]
    Invalid(DescriptorViolation),
}

impl DriverDescriptor {
    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::with::singleton_map_recursive::deserialize(serde_yaml::Deserializer::from_str(text))
    }

    pub fn to_yaml(&self) -> String {
        let mut out = Vec::new();
        let mut ser = serde_yaml::Serializer::new(&mut out);
        serde_yaml::with::singleton_map_recursive::serialize(self, &mut ser).expect("descriptor serializes");
        String::from_utf8(out).expect("yaml is utf-8")
    }

    pub fn mapping(&self, name: &str) -> Option<&RegisterMapping> {
        self.mappings.iter().find(|m| m.name == name)
    }

    /// Measurement names in CSV column order (lexicographic).
    pub fn measurement_names(&self) -> Vec<String> {
        let names: BTreeSet<&str> = self.mappings.iter().map(|m| m.name.as_str()).collect();
        names.into_iter().map(str::to_string).collect()
    }

    pub fn units(&self) -> BTreeMap<String, String> {
        self.mappings
            .iter()
            .map(|m| (m.name.clone(), m.unit.clone()))
            .collect()
    }

    pub fn with_hook(mut self, hook: ValueHook) -> Self {
        self.hook = Some(hook);
        self
    }

    /// Every invariant violation, each naming the offending mapping.
    pub fn validate(&self) -> Vec<DescriptorViolation> {
        let mut out = Vec::new();
        if !is_identifier(&self.sensor_type) {
            out.push(DescriptorViolation::InvalidSensorType(self.sensor_type.clone()));
        }
        if self.mappings.is_empty() {
            out.push(DescriptorViolation::NoMappings);
        }
        if self.min_poll_interval < Duration::from_secs(1) {
            out.push(DescriptorViolation::PollIntervalTooShort);
        }
        let mut seen = BTreeSet::new();
        for m in &self.mappings {
            if !is_identifier(&m.name) {
                out.push(DescriptorViolation::InvalidName { mapping: m.name.clone() });
            }
            if !seen.insert(m.name.as_str()) {
                out.push(DescriptorViolation::DuplicateName { mapping: m.name.clone() });
            }
            if m.unit.trim().is_empty() {
                out.push(DescriptorViolation::EmptyUnit { mapping: m.name.clone() });
            }
            if m.span().end > 0x1_0000 {
                out.push(DescriptorViolation::RegisterOverflow { mapping: m.name.clone() });
            }
        }
        for (i, a) in self.mappings.iter().enumerate() {
            for b in &self.mappings[i + 1..] {
                let (sa, sb) = (a.span(), b.span());
                if a.function == b.function && sa.start < sb.end && sb.start < sa.end {
                    out.push(DescriptorViolation::OverlappingRegisters {
                        first: a.name.clone(),
                        second: b.name.clone(),
                        function: a.function,
                    });
                }
            }
        }
        out
    }

    /// Copy of this descriptor with register overrides applied.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, RegisterOverride>) -> Result<Self, OverrideError> {
        let mut d = self.clone();
        for (name, o) in overrides {
            let m = d
                .mappings
                .iter_mut()
                .find(|m| &m.name == name)
                .ok_or_else(|| OverrideError::UnknownMeasurement {
                    sensor_type: self.sensor_type.clone(),
                    name: name.clone(),
                })?;
            if let Some(r) = o.register {
                m.register = r;
            }
            if let Some(f) = o.function {
                m.function = f;
            }
            if let Some(w) = o.word_order {
                m.codec = m.codec.with_word_order(w);
            }
        }
        match d.validate().into_iter().next() {
            Some(v) => Err(OverrideError::Invalid(v)),
            None => Ok(d),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapping(name: &str, reg: u16, dt: DataType) -> RegisterMapping {
        RegisterMapping::new(name, FunctionCode::ReadHoldingRegisters, reg, ValueCodec::plain(dt), "ppm")
    }

    fn descriptor(mappings: Vec<RegisterMapping>) -> DriverDescriptor {
        DriverDescriptor {
            sensor_type: "demo".into(),
            display_name: "Demo".into(),
            default_serial: LineSettings::default(),
            min_poll_interval: Duration::from_secs(1),
            mappings,
            hook: None,
        }
    }

    #[test]
    fn overlapping_registers() {
        let d = descriptor(vec![mapping("a", 0, DataType::Float32), mapping("b", 0, DataType::U32)]);
        assert_eq!(
            d.validate(),
            vec![DescriptorViolation::OverlappingRegisters {
                first: "a".into(),
                second: "b".into(),
                function: FunctionCode::ReadHoldingRegisters,
            }]
        );
        // same registers on different function codes do not overlap
        let mut b = mapping("b", 0, DataType::U32);
        b.function = FunctionCode::ReadInputRegisters;
        assert!(descriptor(vec![mapping("a", 0, DataType::Float32), b]).validate().is_empty());
        // adjacent is fine
        assert!(descriptor(vec![mapping("a", 0, DataType::Float32), mapping("b", 2, DataType::U16)])
            .validate()
            .is_empty());
    }

    #[test]
    fn empty_and_bad_names() {
        assert_eq!(descriptor(vec![]).validate(), vec![DescriptorViolation::NoMappings]);
        let mut m = mapping("CO2", 0, DataType::U16);
        m.unit = " ".into();
        let v = descriptor(vec![m, mapping("x", 0xFFFF, DataType::Float32)]).validate();
        assert!(v.contains(&DescriptorViolation::InvalidName { mapping: "CO2".into() }));
        assert!(v.contains(&DescriptorViolation::EmptyUnit { mapping: "CO2".into() }));
        assert!(v.contains(&DescriptorViolation::RegisterOverflow { mapping: "x".into() }));
        let mut d = descriptor(vec![mapping("a", 0, DataType::U16), mapping("a", 4, DataType::U16)]);
        d.min_poll_interval = Duration::ZERO;
        let v = d.validate();
        assert!(v.contains(&DescriptorViolation::DuplicateName { mapping: "a".into() }));
        assert!(v.contains(&DescriptorViolation::PollIntervalTooShort));
    }

    #[test]
    fn polynomial_transform() {
        let t = Transform::Polynomial { coefficients: vec![1.0, 2.0, 3.0] };
        assert_eq!(t.apply(2.0), 1.0 + 4.0 + 12.0);
    }

    #[test]
    fn overrides() {
        let d = descriptor(vec![mapping("a", 0, DataType::Float32), mapping("b", 2, DataType::U16)]);
        let mut o = BTreeMap::new();
        o.insert("a".to_string(), RegisterOverride { register: Some(10), word_order: Some(WordOrder::LowWordFirst), ..Default::default() });
        let d2 = d.with_overrides(&o).unwrap();
        assert_eq!(d2.mapping("a").unwrap().register, 10);
        assert_eq!(d2.mapping("a").unwrap().codec.word_order(), WordOrder::LowWordFirst);

        o.insert("zzz".to_string(), RegisterOverride::default());
        assert!(matches!(d.with_overrides(&o), Err(OverrideError::UnknownMeasurement { .. })));

        let mut o = BTreeMap::new();
        o.insert("b".to_string(), RegisterOverride { register: Some(1), ..Default::default() });
        assert!(matches!(d.with_overrides(&o), Err(OverrideError::Invalid(_))));
    }

    #[test]
    fn yaml_round_trip() {
        let d = descriptor(vec![mapping("a", 0, DataType::Float32)]);
        let back = DriverDescriptor::from_yaml(&d.to_yaml()).unwrap();
        assert_eq!(back, d);
    }
}
