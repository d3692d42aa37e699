use std::sync::Arc;

use modlog::clock::{Clock, SimClock, StopSignal, SystemClock};
use modlog::drivers::DriverRegistry;
use modlog::inventory::{plan_tasks, validate_inventory, PlanError};
use modlog::logger::{run_logging_service, PortOpener, RealPorts, ServiceOptions, VirtualPorts};
use serde_json::json;

use crate::common::{build_buses, load_inventory, load_scenario, pick_host, Failure, Output};
use crate::RunArgs;

pub fn run(args: &RunArgs, registry: &DriverRegistry, out: &Output) -> Result<u8, Failure> {
    let inv = load_inventory(&args.inventory)?;
    let violations = validate_inventory(&inv, registry);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Failure::domain(format!("inventory is not deployable:\n{}", lines.join("\n")))
            .with_detail(json!({ "violations": lines })));
    }
    let host = pick_host(&inv, args.host.as_deref());
    let tasks = plan_tasks(&inv, &host, registry).map_err(|e| match e {
        PlanError::UnknownHost { .. } | PlanError::Invalid { .. } => Failure::domain(e.to_string()),
    })?;

    let (clock, opener): (Arc<dyn Clock>, Box<dyn PortOpener>) = match &args.scenario {
        Some(path) => {
            let scenario = load_scenario(path)?;
            let clock: Arc<dyn Clock> = if args.realtime {
                Arc::new(SystemClock::new())
            } else {
                let origin = args.sim_start.or(scenario.start).unwrap_or_else(chrono::Utc::now);
                Arc::new(SimClock::new(origin))
            };
            let buses = build_buses(&scenario, clock.clone(), registry)?;
            (clock, Box::new(VirtualPorts::new(buses)))
        }
        None => (Arc::new(SystemClock::new()), Box::new(RealPorts)),
    };

    let stop = StopSignal::new();
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.stop())
            .map_err(|e| Failure::usage(format!("installing signal handler: {e}")))?;
    }
    tracing::info!(host = %host, tasks = tasks.len(), "starting logging service");
    let summary = run_logging_service(
        &tasks,
        registry,
        clock,
        opener.as_ref(),
        &stop,
        &ServiceOptions {
            duration: args.duration,
            sync_writes: args.sync,
        },
    );
    out.emit(
        || {
            summary
                .tasks
                .iter()
                .map(|t| {
                    format!(
                        "{}: {} ticks, {} ok, {} partial, {} failed, {} skipped, {} rows{}\n",
                        t.sensor_id,
                        t.ticks,
                        t.ok,
                        t.partial,
                        t.failed,
                        t.skipped,
                        t.rows_written,
                        if t.storage_errors > 0 {
                            format!(", {} storage errors", t.storage_errors)
                        } else {
                            String::new()
                        }
                    )
                })
                .collect()
        },
        || json!({ "command": "run", "ok": true, "host": host, "tasks": summary.tasks }),
    );
    Ok(0)
}
