//! Data-driven bus setups for the `simulate`, `scan`, `read` and `run`
//! commands and for integration tests.
//!
//! ```yaml
//! start: 2025-03-01T00:00:00Z        # simulated clock origin (optional)
//! buses:
//!   - port: /dev/ttyAMA0
//!     slaves:
//!       - address: 1
//!         driver: gmp252              # lets `measurements` and series use names
//!         measurements: {co2: 425.0}
//!         holding: {100: 0x1234}      # raw registers
//!         values:                     # typed registers
//!           - {function: input, register: 4, datatype: s16, scale: 0.1, value: -3.5}
//!         series:
//!           - measurement: co2
//!             shape: {step: {at_s: 30, before: 25.0, after: 30.0}}
//!         faults: [respond, drop, corrupt_crc, {exception: 2}, {delay_ms: 200}]
//!         random_faults: {drop: 0.1, corrupt_crc: 0.05, seed: 7, length: 5000}
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FaultAction, FaultProfile, SharedBus, SimError, VirtualBus, VirtualSlave};
use crate::clock::Clock;
use crate::drivers::DriverRegistry;
use crate::modbus::{DataType, ExceptionCode, FunctionCode, SlaveAddress, ValueCodec, WordOrder};
use crate::Codec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario syntax error: {0}")]
    Syntax(String),
    #[error("scenario error at {path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<DateTime<Utc>>,
    #[serde(default)]
    pub buses: Vec<BusDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusDoc {
    pub port: String,
    #[serde(default)]
    pub slaves: Vec<SlaveDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaveDoc {
    pub address: SlaveAddress,
    #[serde(default)]
    pub driver: Option<String>,
    #[serde(default)]
    pub measurements: BTreeMap<String, f64>,
    #[serde(default)]
    pub holding: BTreeMap<u16, u16>,
    #[serde(default)]
    pub input: BTreeMap<u16, u16>,
    #[serde(default)]
    pub values: Vec<ValueDoc>,
    #[serde(default)]
    pub series: Vec<SeriesDoc>,
    #[serde(default)]
    pub faults: Vec<FaultDoc>,
    #[serde(default)]
    pub random_faults: Option<RandomFaultsDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueDoc {
    pub function: FunctionCode,
    pub register: u16,
    pub datatype: DataType,
    #[serde(default)]
    pub word_order: WordOrder,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
    pub value: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesDoc {
    #[serde(default)]
    pub measurement: Option<String>,
    #[serde(default)]
    pub function: Option<FunctionCode>,
    #[serde(default)]
    pub register: Option<u16>,
    #[serde(default)]
    pub datatype: Option<DataType>,
    #[serde(default)]
    pub word_order: Option<WordOrder>,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Constant(f64),
    Step { at_s: f64, before: f64, after: f64 },
    Sine { mean: f64, amplitude: f64, period_s: f64 },
    Ramp { start: f64, per_hour: f64 },
}

impl Shape {
    pub fn eval(&self, t: Duration) -> f64 {
        let s = t.as_secs_f64();
        match *self {
            Shape::Constant(v) => v,
            Shape::Step { at_s, before, after } => {
                if s < at_s {
                    before
                } else {
                    after
                }
            }
            Shape::Sine { mean, amplitude, period_s } => {
                mean + amplitude * (2.0 * std::f64::consts::PI * s / period_s).sin()
            }
            Shape::Ramp { start, per_hour } => start + per_hour * s / 3600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultDoc {
    Respond,
    Drop,
    CorruptCrc,
    Exception(u8),
    DelayMs(u64),
}

impl From<FaultDoc> for FaultAction {
    fn from(f: FaultDoc) -> Self {
        match f {
            FaultDoc::Respond => FaultAction::Respond,
            FaultDoc::Drop => FaultAction::Drop,
            FaultDoc::CorruptCrc => FaultAction::CorruptCrc,
            FaultDoc::Exception(code) => FaultAction::Exception(ExceptionCode::from_byte(code)),
            FaultDoc::DelayMs(ms) => FaultAction::Delay(Duration::from_millis(ms)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomFaultsDoc {
    #[serde(default)]
    pub drop: f64,
    #[serde(default)]
    pub corrupt_crc: f64,
    #[serde(default)]
    pub seed: u64,
    pub length: usize,
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Self, ScenarioError> {
        let value: serde_yaml::Value =
            serde_yaml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        if value.is_null() {
            return Ok(Scenario { start: None, buses: Vec::new() });
        }
        let mut track = serde_path_to_error::Track::new();
        let de = serde_path_to_error::Deserializer::new(value, &mut track);
        serde_yaml::with::singleton_map_recursive::deserialize(de)
            .map_err(|e: serde_yaml::Error| invalid(track.path().to_string(), e))
    }

    pub fn ports(&self) -> Vec<String> {
        self.buses.iter().map(|b| b.port.clone()).collect()
    }

    /// Builds one virtual bus per port, with every slave attached.
    pub fn build(
        &self,
        clock: Arc<dyn Clock>,
        registry: &DriverRegistry,
    ) -> Result<BTreeMap<String, SharedBus>, ScenarioError> {
        let mut buses = BTreeMap::new();
        for (bi, bus_doc) in self.buses.iter().enumerate() {
            let mut bus = VirtualBus::new(clock.clone());
            for (si, slave_doc) in bus_doc.slaves.iter().enumerate() {
                let path = format!("buses[{bi}].slaves[{si}]");
                let slave = build_slave(slave_doc, registry, &path)?;
                bus.attach_slave(slave).map_err(|e: SimError| invalid(&path, e))?;
            }
            if buses.insert(bus_doc.port.clone(), bus.shared()).is_some() {
                return Err(invalid(format!("buses[{bi}].port"), format!("port {} listed twice", bus_doc.port)));
            }
        }
        Ok(buses)
    }
}

fn build_slave(doc: &SlaveDoc, registry: &DriverRegistry, path: &str) -> Result<VirtualSlave, ScenarioError> {
    let mut slave = VirtualSlave::new(doc.address);
    let driver = match &doc.driver {
        Some(name) => Some(registry.lookup(name).map_err(|e| invalid(format!("{path}.driver"), e))?),
        None => None,
    };
    for (reg, v) in &doc.holding {
        slave.set_register(FunctionCode::ReadHoldingRegisters, *reg, *v);
    }
    for (reg, v) in &doc.input {
        slave.set_register(FunctionCode::ReadInputRegisters, *reg, *v);
    }
    for (i, v) in doc.values.iter().enumerate() {
        let p = format!("{path}.values[{i}]");
        let codec = ValueCodec::new(v.datatype, v.word_order, v.scale, v.offset).map_err(|e| invalid(&p, e))?;
        let words = codec.encode(v.value).map_err(|e| invalid(&p, e))?;
        slave.set_registers(v.function, v.register, &words);
    }
    for (name, value) in &doc.measurements {
        let p = format!("{path}.measurements.{name}");
        let d = driver
            .as_ref()
            .ok_or_else(|| invalid(&p, "measurements need a `driver`"))?;
        let m = d
            .mapping(name)
            .ok_or_else(|| invalid(&p, format!("driver {} has no measurement {name}", d.sensor_type)))?;
        let words = m.codec.encode(*value).map_err(|e| invalid(&p, e))?;
        slave.set_registers(m.function, m.register, &words);
    }
    for (i, s) in doc.series.iter().enumerate() {
        let p = format!("{path}.series[{i}]");
        let (function, register, mut codec): (FunctionCode, u16, Codec) = match &s.measurement {
            Some(name) => {
                let d = driver
                    .as_ref()
                    .ok_or_else(|| invalid(&p, "series by measurement needs a `driver`"))?;
                let m = d
                    .mapping(name)
                    .ok_or_else(|| invalid(&p, format!("driver {} has no measurement {name}", d.sensor_type)))?;
                (m.function, m.register, m.codec)
            }
            None => {
                let need = |what: &str| invalid(&p, format!("`{what}` is required without `measurement`"));
                (
                    s.function.ok_or_else(|| need("function"))?,
                    s.register.ok_or_else(|| need("register"))?,
                    ValueCodec::plain(s.datatype.ok_or_else(|| need("datatype"))?),
                )
            }
        };
        if let Some(order) = s.word_order {
            codec = codec.with_word_order(order);
        }
        // Fail early on values the codec cannot hold.
        codec.encode(s.shape.eval(Duration::ZERO)).map_err(|e| invalid(&p, e))?;
        let shape = s.shape.clone();
        if codec.words() == 2 {
            slave.set_register_series(
                function,
                register,
                Arc::new(move |t| {
                    let w = codec.encode(shape.eval(t)).unwrap_or_else(|_| vec![0xFFFF, 0xFFFF]);
                    [w[0], w[1]]
                }),
            );
        } else {
            slave.set_register_series_word(
                function,
                register,
                Arc::new(move |t| codec.encode(shape.eval(t)).map(|w| w[0]).unwrap_or(0xFFFF)),
            );
        }
    }
    let mut script: Vec<FaultAction> = doc.faults.iter().map(|f| (*f).into()).collect();
    if let Some(r) = &doc.random_faults {
        if !(0.0..=1.0).contains(&(r.drop + r.corrupt_crc)) || r.drop < 0.0 || r.corrupt_crc < 0.0 {
            return Err(invalid(format!("{path}.random_faults"), "probabilities must be in [0, 1]"));
        }
        script.extend_from_slice(FaultProfile::random(r.length, r.drop, r.corrupt_crc, r.seed).script());
    }
    slave.set_faults(FaultProfile::new(script));
    Ok(slave)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;

    const DOC: &str = r#"
start: 2025-03-01T00:00:00Z
buses:
  - port: /dev/ttyAMA0
    slaves:
      - address: 1
        driver: gmp252
        measurements: {co2: 25.0}
      - address: 7
        holding: {0: 0x41C8, 1: 0}
        values:
          - {function: input, register: 4, datatype: s16, scale: 0.1, value: -0.1}
        series:
          - {function: holding, register: 10, datatype: float32, shape: {step: {at_s: 30, before: 25.0, after: 30.0}}}
        faults: [drop, {exception: 4}, {delay_ms: 20}]
"#;

    #[test]
    fn builds_buses() {
        let sc = Scenario::from_yaml(DOC).unwrap();
        assert_eq!(sc.ports(), vec!["/dev/ttyAMA0"]);
        let clock: Arc<dyn Clock> = Arc::new(SimClock::new(sc.start.unwrap()));
        let buses = sc.build(clock, &DriverRegistry::builtin()).unwrap();
        let bus = buses["/dev/ttyAMA0"].lock().unwrap();
        let s1 = bus.slave(SlaveAddress::new(1).unwrap()).unwrap();
        // gmp252 co2 is float32 low word first at holding 0
        assert_eq!(s1.read_register(FunctionCode::ReadHoldingRegisters, 0, Duration::ZERO), Some(0x0000));
        assert_eq!(s1.read_register(FunctionCode::ReadHoldingRegisters, 1, Duration::ZERO), Some(0x41C8));
        let s7 = bus.slave(SlaveAddress::new(7).unwrap()).unwrap();
        assert_eq!(s7.read_register(FunctionCode::ReadInputRegisters, 4, Duration::ZERO), Some(0xFFFF));
        assert_eq!(
            s7.read_register(FunctionCode::ReadHoldingRegisters, 10, Duration::from_secs(31)),
            Some(0x41F0)
        );
        assert_eq!(s7.faults().script().len(), 3);
    }

    #[test]
    fn errors_carry_paths() {
        let err = Scenario::from_yaml("buses: [{port: p, slaves: [{address: 0}]}]").unwrap_err();
        assert!(matches!(&err, ScenarioError::Invalid { path, .. } if path.starts_with("buses[0].slaves[0]")), "{err}");
        let sc = Scenario::from_yaml("buses: [{port: p, slaves: [{address: 1, measurements: {co2: 1.0}}]}]").unwrap();
        let clock: Arc<dyn Clock> = Arc::new(SimClock::new(Utc::now()));
        let err = sc.build(clock.clone(), &DriverRegistry::builtin()).unwrap_err();
        assert!(err.to_string().contains("buses[0].slaves[0].measurements.co2"));
        let sc = Scenario::from_yaml("buses: [{port: p, slaves: [{address: 1}, {address: 1}]}]").unwrap();
        assert!(sc.build(clock, &DriverRegistry::builtin()).is_err());
        assert!(Scenario::from_yaml("buses: [").is_err());
        assert!(Scenario::from_yaml("").unwrap().buses.is_empty());
    }
}
