use std::sync::Arc;

use modlog::clock::{Clock, SimClock};
use modlog::drivers::{read_sensor, DriverRegistry, ReadingStatus};
use modlog::logger::format_value;
use modlog::modbus::{build_read_request, parse_response, FrameError, FunctionCode, RequestPdu, SlaveAddress};
use modlog::transport::{LineSettings, RetryPolicy, TransportError};
use serde_json::json;

use crate::common::{build_buses, load_scenario, open_bus, Failure, Output};
use crate::{ReadArgs, ScanArgs, SimulateArgs};

pub fn scan(args: &ScanArgs, registry: &DriverRegistry, out: &Output) -> Result<u8, Failure> {
    let (from, to) = if args.full { (1, 247) } else { (args.from, args.to) };
    if from > to {
        return Err(Failure::usage(format!("empty address range {from}..{to}")));
    }
    let line = args.line.apply(LineSettings::default())?;
    let policy = RetryPolicy::new(1, std::time::Duration::from_millis(args.timeout_ms.max(1)))
        .map_err(|e| Failure::usage(e.to_string()))?;
    let mut endpoint = open_bus(&args.bus, line, registry)?;
    let mut found = Vec::new();
    for addr in from..=to {
        let slave = SlaveAddress::new(addr).expect("range within 1..=247");
        let req = RequestPdu::new(slave, FunctionCode::ReadHoldingRegisters, 0, 1).expect("valid probe");
        match endpoint.transact(&build_read_request(&req), &policy) {
            Ok(frame) => match parse_response(&frame, &req) {
                Ok(_) | Err(FrameError::Exception(_)) => found.push(addr),
                Err(e) => tracing::warn!(address = addr, error = %e, "unusable reply"),
            },
            Err(TransportError::Timeout { .. }) => {}
            Err(e) => return Err(Failure::usage(e.to_string())),
        }
    }
    if found.is_empty() && !out.json {
        eprintln!("no slave answered in {from}..={to}");
    }
    out.emit(
        || found.iter().map(|a| format!("{a}\n")).collect(),
        || {
            json!({
                "command": "scan",
                "ok": true,
                "port": endpoint.config().port,
                "from": from,
                "to": to,
                "responding": found,
            })
        },
    );
    Ok(0)
}

pub fn read(args: &ReadArgs, registry: &DriverRegistry, out: &Output) -> Result<u8, Failure> {
    let descriptor = registry
        .lookup(&args.sensor_type)
        .map_err(|e| Failure::usage(e.to_string()).with_detail(json!({ "known": registry.keys() })))?;
    let slave = SlaveAddress::new(args.slave).map_err(|e| Failure::usage(e.to_string()))?;
    let policy = RetryPolicy::new(args.attempts, std::time::Duration::from_millis(args.timeout_ms))
        .map_err(|e| Failure::usage(e.to_string()))?;
    let line = args.line.apply(descriptor.default_serial)?;
    let mut endpoint = open_bus(&args.bus, line, registry)?;
    let reading = read_sensor(&args.sensor_type, &descriptor, &mut endpoint, slave, &policy);
    out.emit(
        || {
            let mut text: String = reading
                .values
                .iter()
                .map(|(name, m)| format!("{name} {} {}\n", format_value(m.value), m.unit))
                .collect();
            text.push_str(&format!("status {}", reading.status.as_str()));
            if let Some(e) = &reading.error_detail {
                text.push_str(&format!(": {e}"));
            }
            text
        },
        || {
            json!({
                "command": "read",
                "ok": reading.status == ReadingStatus::Ok,
                "sensor_type": descriptor.sensor_type,
                "slave": slave.get(),
                "timestamp": reading.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                "status": reading.status.as_str(),
                "error": reading.error_detail,
                "values": reading.values,
            })
        },
    );
    Ok(if reading.status == ReadingStatus::Ok { 0 } else { 1 })
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ")
}

pub fn simulate(args: &SimulateArgs, registry: &DriverRegistry, out: &Output) -> Result<u8, Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let frame = args
        .frame
        .as_deref()
        .map(|f| {
            let compact: String = f.chars().filter(|c| !c.is_whitespace()).collect();
            hex::decode(compact).map_err(|e| Failure::usage(format!("--frame: {e}")))
        })
        .transpose()?;
    let sim = Arc::new(SimClock::new(scenario.start.unwrap_or_else(chrono::Utc::now)));
    let clock: Arc<dyn Clock> = sim.clone();
    let buses = build_buses(&scenario, clock, registry)?;

    let buses_doc: Vec<_> = buses
        .iter()
        .map(|(port, bus)| {
            let bus = bus.lock().expect("bus lock");
            let slaves: Vec<_> = bus
                .slaves()
                .map(|s| {
                    json!({
                        "address": s.address().get(),
                        "holding": s.populated(FunctionCode::ReadHoldingRegisters),
                        "input": s.populated(FunctionCode::ReadInputRegisters),
                        "faults": s.faults().script().len(),
                    })
                })
                .collect();
            json!({ "port": port, "slaves": slaves })
        })
        .collect();

    let reply = match frame {
        None => None,
        Some(frame) => {
            let bus = match (&args.port, buses.len()) {
                (Some(p), _) => buses
                    .get(p)
                    .ok_or_else(|| Failure::usage(format!("scenario has no bus on {p}")))?,
                (None, 1) => buses.values().next().expect("one bus"),
                (None, n) => return Err(Failure::usage(format!("scenario has {n} buses; choose one with --port"))),
            };
            if let Some(at) = args.at {
                sim.advance(at);
            }
            let reply = bus.lock().expect("bus lock").handle_request(&frame);
            Some((frame, reply))
        }
    };

    out.emit(
        || match &reply {
            Some((_, Some(r))) => to_hex(&r.bytes),
            Some((_, None)) => "no reply".into(),
            None => buses
                .iter()
                .flat_map(|(port, bus)| {
                    let bus = bus.lock().expect("bus lock");
                    bus.slaves()
                        .map(|s| {
                            format!(
                                "{port} slave {}: {} holding, {} input registers, {} scripted faults\n",
                                s.address().get(),
                                s.populated(FunctionCode::ReadHoldingRegisters).len(),
                                s.populated(FunctionCode::ReadInputRegisters).len(),
                                s.faults().script().len()
                            )
                        })
                        .collect::<Vec<_>>()
                })
                .collect(),
        },
        || {
            let mut doc = json!({ "command": "simulate", "ok": true, "buses": buses_doc });
            if let Some((frame, r)) = &reply {
                doc["request"] = json!(to_hex(frame));
                doc["reply"] = json!(r.as_ref().map(|r| to_hex(&r.bytes)));
                doc["reply_delay_ms"] = json!(r.as_ref().map(|r| r.delay.as_secs_f64() * 1000.0));
            }
            doc
        },
    );
    Ok(0)
}
