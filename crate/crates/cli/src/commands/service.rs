use std::fs;

use modlog::drivers::DriverRegistry;
use modlog::inventory::{render_service_unit, service_unit_name};
use serde_json::json;

use crate::common::{load_inventory, pick_host, Failure, Output};
use crate::GenServiceArgs;

pub fn gen_service(args: &GenServiceArgs, _registry: &DriverRegistry, out: &Output) -> Result<u8, Failure> {
    let inv = load_inventory(&args.inventory)?;
    let host = pick_host(&inv, args.host.as_deref());
    if inv.host(&host).is_none() {
        return Err(Failure::domain(format!(
            "host {host:?} is not in the inventory (known: {})",
            inv.hosts.iter().map(|h| h.hostname.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    let inventory = match &args.remote_inventory {
        Some(p) => p.clone(),
        None => std::path::absolute(&args.inventory)
            .map_err(|e| Failure::usage(format!("resolving {}: {e}", args.inventory.display())))?
            .display()
            .to_string(),
    };
    let unit = render_service_unit(&host, &args.exec, &args.working_dir, &inventory);
    let name = service_unit_name(&host);
    let path = match &args.output {
        Some(dir) => {
            let path = dir.join(&name);
            fs::write(&path, &unit).map_err(|e| Failure::usage(format!("writing {}: {e}", path.display())))?;
            Some(path)
        }
        None => None,
    };
    out.emit(
        || match &path {
            Some(p) => format!("wrote {}", p.display()),
            None => unit.clone(),
        },
        || {
            json!({
                "command": "gen-service",
                "ok": true,
                "host": host,
                "unit_name": name,
                "path": path.as_ref().map(|p| p.display().to_string()),
                "unit": unit,
            })
        },
    );
    Ok(0)
}
