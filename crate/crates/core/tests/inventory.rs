use std::time::Duration;

use modlog::drivers::DriverRegistry;
use modlog::inventory::{
    parse_inventory, plan_tasks, validate_inventory, InventoryError, PlanError, ViolationKind, EXAMPLE_INVENTORY,
};
use modlog::transport::{LineSettings, Parity, StopBits};
use proptest::prelude::*;

const TWO_ON_ONE_BUS: &str = "
hosts:
  - hostname: cavepi01
    address: 10.0.0.2
    username: pi
    sensors:
      - {sensor_id: a, sensor_type: gmp252, port: /dev/ttyAMA0, slave: 1}
      - {sensor_id: b, sensor_type: gmp252, port: /dev/ttyAMA0, slave: 2}
";

#[test]
fn example_inventory_parses() {
    let inv = parse_inventory(EXAMPLE_INVENTORY).unwrap();
    assert_eq!(inv.hosts.len(), 1);
    assert_eq!(inv.sensor_count(), 2);
    assert_eq!(inv.hosts[0].sensors[0].port, "/dev/ttyAMA0");
    assert!(validate_inventory(&inv, &DriverRegistry::builtin()).is_empty());
}

#[test]
fn empty_document_misses_hosts() {
    for text in ["", "# nothing\n"] {
        match parse_inventory(text) {
            Err(InventoryError::MissingRequiredField { path }) => assert_eq!(path, "hosts"),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn typo_is_unknown_key_with_path() {
    let text = TWO_ON_ONE_BUS.replace("slave: 2}", "slave: 2, intervall: 30}");
    match parse_inventory(&text) {
        Err(InventoryError::UnknownKey { path, key }) => {
            assert_eq!(key, "intervall");
            assert_eq!(path, "hosts[0].sensors[1].intervall");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_and_mistyped_fields_carry_paths() {
    let text = TWO_ON_ONE_BUS.replace(", slave: 2}", "}");
    assert_eq!(
        parse_inventory(&text).unwrap_err(),
        InventoryError::MissingRequiredField {
            path: "hosts[0].sensors[1].slave".into()
        }
    );
    let text = TWO_ON_ONE_BUS.replace("slave: 2}", "slave: two}");
    match parse_inventory(&text) {
        Err(InventoryError::TypeMismatch { path, .. }) => assert_eq!(path, "hosts[0].sensors[1].slave"),
        other => panic!("{other:?}"),
    }
    let text = TWO_ON_ONE_BUS.replace("slave: 2}", "slave: 0}");
    match parse_inventory(&text) {
        Err(InventoryError::InvalidValue { path, .. }) => assert_eq!(path, "hosts[0].sensors[1].slave"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn syntax_error_has_location() {
    match parse_inventory("hosts:\n  - hostname: [unclosed\n") {
        Err(InventoryError::Syntax { line, .. }) => assert!(line >= 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn ascii_mode_and_uppercase_hostname_rejected() {
    let text = TWO_ON_ONE_BUS.replace("slave: 2}", "slave: 2, mode: ascii}");
    assert_eq!(parse_inventory(&text).unwrap_err().path(), Some("hosts[0].sensors[1].mode"));
    let text = TWO_ON_ONE_BUS.replace("cavepi01", "CavePi01");
    assert_eq!(parse_inventory(&text).unwrap_err().path(), Some("hosts[0].hostname"));
    let text = TWO_ON_ONE_BUS.replace("hosts:", "version: 2\nhosts:");
    assert_eq!(parse_inventory(&text).unwrap_err().path(), Some("version"));
}

#[test]
fn shared_bus_with_unique_addresses_is_valid() {
    let inv = parse_inventory(TWO_ON_ONE_BUS).unwrap();
    assert_eq!(validate_inventory(&inv, &DriverRegistry::builtin()), vec![]);
}

#[test]
fn duplicate_slave_is_reported_on_second_sensor() {
    let inv = parse_inventory(&TWO_ON_ONE_BUS.replace("slave: 2", "slave: 1")).unwrap();
    let v = validate_inventory(&inv, &DriverRegistry::builtin());
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].path, "hosts[0].sensors[1]");
    assert!(matches!(v[0].kind, ViolationKind::DuplicateSlaveAddress { slave: 1, .. }));
    assert!(v[0].to_string().contains("already used by hosts[0].sensors[0]"));
}

#[test]
fn shared_bus_baud_conflict() {
    let text = TWO_ON_ONE_BUS.replace("slave: 2}", "slave: 2, serial: {baud: 9600}}");
    let inv = parse_inventory(&text).unwrap();
    let v = validate_inventory(&inv, &DriverRegistry::builtin());
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].path, "hosts[0].sensors[1].serial");
    assert!(matches!(v[0].kind, ViolationKind::SharedBusSerialConflict { .. }));
}

#[test]
fn other_violations() {
    let text = TWO_ON_ONE_BUS
        .replace("sensor_id: b, sensor_type: gmp252", "sensor_id: a, sensor_type: nosuch")
        .replace("slave: 1}", "slave: 1, interval: 1, registers: {co2: {register: 65535}}}");
    let inv = parse_inventory(&text).unwrap();
    let v = validate_inventory(&inv, &DriverRegistry::builtin());
    let kinds: Vec<_> = v.iter().map(|v| (&v.path[..], &v.kind)).collect();
    assert!(kinds.iter().any(|(p, k)| *p == "hosts[0].sensors[1]" && matches!(k, ViolationKind::DuplicateSensorId { .. })));
    assert!(kinds
        .iter()
        .any(|(p, k)| *p == "hosts[0].sensors[1].sensor_type" && matches!(k, ViolationKind::UnknownSensorType { .. })));
    assert!(kinds
        .iter()
        .any(|(p, k)| *p == "hosts[0].sensors[0].registers" && matches!(k, ViolationKind::InvalidOverride { .. })));
}

#[test]
fn plan_merges_driver_serial_defaults() {
    let registry = DriverRegistry::builtin();
    let inv = parse_inventory(EXAMPLE_INVENTORY).unwrap();
    let tasks = plan_tasks(&inv, "cavepi01", &registry).unwrap();
    assert_eq!(tasks.len(), 2);
    assert_eq!(tasks[0].slave.get(), 1);
    assert_eq!(tasks[1].slave.get(), 2);
    let gmp = LineSettings::new(19200, Parity::None, StopBits::Two, 8).unwrap();
    assert_eq!(tasks[0].serial.line, gmp);
    assert_eq!(tasks[0].serial.line, registry.lookup("gmp252").unwrap().default_serial);
    assert_eq!(tasks[0].interval, Duration::from_secs(60));
    assert_eq!(tasks, plan_tasks(&inv, "cavepi01", &registry).unwrap());
    assert!(matches!(
        plan_tasks(&inv, "elsewhere", &registry),
        Err(PlanError::UnknownHost { .. })
    ));
}

#[test]
fn plan_orders_by_port_then_slave() {
    let text = TWO_ON_ONE_BUS
        .replace("sensor_id: a, sensor_type: gmp252, port: /dev/ttyAMA0, slave: 1", "sensor_id: a, sensor_type: gmp252, port: /dev/ttyUSB0, slave: 1")
        .replace("slave: 2}", "slave: 2}\n      - {sensor_id: c, sensor_type: gmp252, port: /dev/ttyAMA0, slave: 1}");
    let inv = parse_inventory(&text).unwrap();
    let ids: Vec<_> = plan_tasks(&inv, "cavepi01", &DriverRegistry::builtin())
        .unwrap()
        .into_iter()
        .map(|t| t.sensor_id)
        .collect();
    assert_eq!(ids, ["c", "b", "a"]);
}

fn sensor_yaml() -> impl Strategy<Value = String> {
    (
        "[a-z][a-z0-9_-]{0,8}",
        prop::sample::select(vec!["gmp252", "alphatracer"]),
        prop::sample::select(vec!["/dev/ttyAMA0", "/dev/ttyUSB0"]),
        1u8..=247,
        1u64..100_000,
        prop::option::of(prop::sample::select(vec![9600u32, 19200, 38400])),
        prop::collection::btree_map("[a-z]{1,5}", "[a-zA-Z0-9 ]{0,6}", 0..3),
        prop::option::of(1u8..=10),
    )
        .prop_map(|(id, ty, port, slave, interval, baud, tags, attempts)| {
            let mut s = format!(
                "      - sensor_id: {id}\n        sensor_type: {ty}\n        port: {port}\n        slave: {slave}\n        interval: {interval}\n"
            );
            if let Some(b) = baud {
                s.push_str(&format!("        serial: {{baud: {b}}}\n"));
            }
            if let Some(a) = attempts {
                s.push_str(&format!("        retry: {{attempts: {a}}}\n"));
            }
            if !tags.is_empty() {
                s.push_str("        tags:\n");
                for (k, v) in tags {
                    s.push_str(&format!("          {k}: \"{v}\"\n"));
                }
            }
            s
        })
}

proptest! {
    #[test]
    fn canonical_round_trip(sensors in prop::collection::vec(sensor_yaml(), 0..4), host in "[a-z0-9][a-z0-9-]{0,9}") {
        let text = format!("hosts:\n  - hostname: '{host}'\n    address: h\n    username: pi\n    sensors:\n{}", sensors.concat());
        let text = if sensors.is_empty() { text.replace("    sensors:\n", "") } else { text };
        let inv = parse_inventory(&text).unwrap();
        let again = parse_inventory(&inv.to_yaml()).unwrap();
        prop_assert_eq!(&inv, &again);
        prop_assert_eq!(inv.to_yaml(), again.to_yaml());
    }

    #[test]
    fn violation_paths_index_real_elements(sensors in prop::collection::vec(sensor_yaml(), 1..5)) {
        let text = format!("hosts:\n  - hostname: h\n    address: h\n    username: pi\n    sensors:\n{}", sensors.concat());
        let inv = parse_inventory(&text).unwrap();
        let value: serde_yaml::Value = serde_yaml::from_str(&inv.to_yaml()).unwrap();
        for v in validate_inventory(&inv, &DriverRegistry::builtin()) {
            let mut node = &value;
            for part in v.path.split('.') {
                let (key, index) = match part.split_once('[') {
                    Some((k, rest)) => (k, Some(rest.trim_end_matches(']').parse::<usize>().unwrap())),
                    None => (part, None),
                };
                node = match node.get(key) {
                    Some(n) => n,
                    // optional blocks left at their defaults are omitted from canonical form
                    None => { prop_assert!(key == "serial" || key == "registers"); break; }
                };
                if let Some(i) = index {
                    node = node.get(i).expect("index in range");
                }
            }
        }
    }
}
