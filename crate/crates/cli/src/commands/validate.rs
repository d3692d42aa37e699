use modlog::drivers::DriverRegistry;
use modlog::inventory::validate_inventory;
use serde_json::json;

use crate::common::{load_inventory, Failure, Output};
use crate::ValidateArgs;

fn plural(n: usize, word: &str) -> String {
    format!("{n} {word}{}", if n == 1 { "" } else { "s" })
}

pub fn validate(args: &ValidateArgs, registry: &DriverRegistry, out: &Output) -> Result<u8, Failure> {
    let inv = load_inventory(&args.inventory)?;
    let violations = validate_inventory(&inv, registry);
    let (hosts, sensors) = (inv.hosts.len(), inv.sensor_count());
    out.emit(
        || {
            if violations.is_empty() {
                format!("OK: {}, {}", plural(hosts, "host"), plural(sensors, "sensor"))
            } else {
                violations.iter().map(|v| format!("{v}\n")).collect()
            }
        },
        || {
            json!({
                "command": "validate",
                "ok": violations.is_empty(),
                "hosts": hosts,
                "sensors": sensors,
                "violations": violations
                    .iter()
                    .map(|v| json!({ "path": v.path, "message": v.kind.to_string() }))
                    .collect::<Vec<_>>(),
            })
        },
    );
    Ok(if violations.is_empty() { 0 } else { 1 })
}
