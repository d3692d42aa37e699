use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;

use super::{write_metadata, CsvSink, LoggingTask, StorageError};
use crate::clock::{Clock, Participant, StopSignal};
use crate::drivers::{read_sensor, DriverDescriptor, DriverRegistry, Reading, ReadingStatus};
use crate::simulator::SharedBus;
use crate::transport::{open_endpoint, BackendSelector, Endpoint, SerialConfig, TransportError};

/// Opens the endpoint behind a port name.
pub trait PortOpener: Send + Sync {
    fn open(&self, config: &SerialConfig, clock: Arc<dyn Clock>) -> Result<Endpoint, TransportError>;
}

/// Hardware serial ports.
#[derive(Debug, Default, Clone, Copy)]
pub struct RealPorts;

impl PortOpener for RealPorts {
    fn open(&self, config: &SerialConfig, clock: Arc<dyn Clock>) -> Result<Endpoint, TransportError> {
        open_endpoint(config, BackendSelector::RealSerial, clock)
    }
}

/// Simulated buses keyed by port name. Unknown ports are reported as missing.
#[derive(Clone, Default)]
pub struct VirtualPorts {
    pub buses: BTreeMap<String, SharedBus>,
}

impl VirtualPorts {
    pub fn new(buses: BTreeMap<String, SharedBus>) -> Self {
        Self { buses }
    }
}

impl PortOpener for VirtualPorts {
    fn open(&self, config: &SerialConfig, clock: Arc<dyn Clock>) -> Result<Endpoint, TransportError> {
        match self.buses.get(&config.port) {
            Some(bus) => open_endpoint(config, BackendSelector::Virtual(bus.clone()), clock),
            None => Err(TransportError::PortNotFound(config.port.clone())),
        }
    }
}

/// Owns the endpoint of one port and hands it out to one task at a time.
/// A failed open is retried on the next use.
pub struct BusCoordinator<'a> {
    config: SerialConfig,
    opener: &'a dyn PortOpener,
    clock: Arc<dyn Clock>,
    endpoint: Mutex<Option<Endpoint>>,
}

impl<'a> BusCoordinator<'a> {
    pub fn new(config: SerialConfig, opener: &'a dyn PortOpener, clock: Arc<dyn Clock>) -> Self {
        Self {
            config,
            opener,
            clock,
            endpoint: Mutex::new(None),
        }
    }

    pub fn port(&self) -> &str {
        &self.config.port
    }

    /// Runs `f` with exclusive use of the open endpoint.
    pub fn with_endpoint<R>(&self, f: impl FnOnce(&mut Endpoint) -> R) -> Result<R, TransportError> {
        let mut guard = self.endpoint.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.opener.open(&self.config, self.clock.clone())?);
            tracing::info!(port = %self.config.port, line = %self.config.line, "port opened");
        }
        Ok(f(guard.as_mut().expect("opened above")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Stop after this much clock time; `None` runs until the stop signal.
    pub duration: Option<Duration>,
    /// fsync every row.
    pub sync_writes: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TaskSummary {
    pub sensor_id: String,
    pub port: String,
    pub ticks: u64,
    pub ok: u64,
    pub partial: u64,
    pub failed: u64,
    pub skipped: u64,
    pub rows_written: u64,
    pub storage_errors: u64,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub tasks: Vec<TaskSummary>,
}

impl RunSummary {
    pub fn task(&self, sensor_id: &str) -> Option<&TaskSummary> {
        self.tasks.iter().find(|t| t.sensor_id == sensor_id)
    }
}

struct Scheduled<'t> {
    index: usize,
    task: &'t LoggingTask,
    descriptor: Option<Arc<DriverDescriptor>>,
    sink: Option<CsvSink>,
    next_tick: u64,
    done: bool,
}

/// Polls every task on a fixed-rate schedule until `stop` fires or the
/// configured duration elapses.
///
/// Tasks are grouped by port and each port is served by one thread, so
/// transactions on a shared bus never overlap. Tick `k` of a task is due at
/// `start + k * interval`, where `start` is the next whole UTC second. A tick
/// may run late inside its own slot; once the slot has passed it is skipped.
pub fn run_logging_service(
    tasks: &[LoggingTask],
    registry: &DriverRegistry,
    clock: Arc<dyn Clock>,
    opener: &dyn PortOpener,
    stop: &StopSignal,
    options: &ServiceOptions,
) -> RunSummary {
    let mut summaries: Vec<TaskSummary> = tasks
        .iter()
        .map(|t| TaskSummary {
            sensor_id: t.sensor_id.clone(),
            port: t.serial.port.clone(),
            ..Default::default()
        })
        .collect();

    let mut by_port: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        by_port.entry(t.port()).or_default().push(i);
    }

    let now_utc = clock.utc();
    let to_next_second = Duration::from_secs(1) - Duration::from_nanos(u64::from(now_utc.timestamp_subsec_nanos()));
    let to_next_second = if to_next_second == Duration::from_secs(1) {
        Duration::ZERO
    } else {
        to_next_second
    };
    let start = clock.monotonic() + to_next_second;
    let end = options.duration.map(|d| start + d);

    let results: Vec<Vec<(usize, TaskSummary)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = by_port
            .into_values()
            .map(|indices| {
                let participant = Participant::new(clock.clone());
                let clock = clock.clone();
                let group: Vec<(usize, &LoggingTask, TaskSummary)> = indices
                    .iter()
                    .map(|&i| (i, &tasks[i], summaries[i].clone()))
                    .collect();
                scope.spawn(move || {
                    let _participant = participant;
                    run_port(group, registry, clock, opener, stop, options, start, end)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("port thread panicked"))
            .collect()
    });

    for (i, s) in results.into_iter().flatten() {
        summaries[i] = s;
    }
    RunSummary { tasks: summaries }
}

#[allow(clippy::too_many_arguments)]
fn run_port(
    group: Vec<(usize, &LoggingTask, TaskSummary)>,
    registry: &DriverRegistry,
    clock: Arc<dyn Clock>,
    opener: &dyn PortOpener,
    stop: &StopSignal,
    options: &ServiceOptions,
    start: Duration,
    end: Option<Duration>,
) -> Vec<(usize, TaskSummary)> {
    let coordinator = BusCoordinator::new(group[0].1.serial.clone(), opener, clock.clone());
    let created_at = clock.utc();
    let mut summaries = Vec::with_capacity(group.len());
    let mut slots = Vec::with_capacity(group.len());

    for (index, task, mut summary) in group {
        let descriptor = registry
            .lookup(&task.sensor_type)
            .map_err(|e| e.to_string())
            .and_then(|d| d.with_overrides(&task.registers).map(Arc::new).map_err(|e| e.to_string()));
        let (descriptor, sink) = match descriptor {
            Ok(d) => {
                if let Err(e) = write_metadata(task, &d, created_at) {
                    tracing::error!(sensor = %task.sensor_id, error = %e, "writing metadata failed");
                    summary.storage_errors += 1;
                    summary.last_error = Some(e.to_string());
                }
                let sink = CsvSink::new(task, d.measurement_names()).with_sync(options.sync_writes);
                (Some(d), Some(sink))
            }
            Err(e) => {
                tracing::error!(sensor = %task.sensor_id, error = %e, "task cannot run");
                summary.last_error = Some(e);
                (None, None)
            }
        };
        let done = descriptor.is_none() || task.interval.is_zero();
        summaries.push(summary);
        slots.push(Scheduled {
            index,
            task,
            descriptor,
            sink,
            next_tick: 0,
            done,
        });
    }

    let due_of = |s: &Scheduled| start + s.task.interval * s.next_tick as u32;

    loop {
        let Some(pos) = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.done)
            .min_by_key(|(i, s)| (due_of(s), *i))
            .map(|(i, _)| i)
        else {
            break;
        };
        let due = due_of(&slots[pos]);
        if end.is_some_and(|end| due >= end) {
            slots[pos].done = true;
            continue;
        }
        if stop.is_stopped() || !clock.sleep_until_or_stop(due, stop) {
            break;
        }

        let slot = &mut slots[pos];
        let summary = &mut summaries[pos];
        let interval = slot.task.interval;
        let now = clock.monotonic();
        let current = ((now - start).as_nanos() / interval.as_nanos()) as u64;
        if current > slot.next_tick {
            let missed = current - slot.next_tick;
            tracing::warn!(sensor = %slot.task.sensor_id, missed, "skipping missed ticks");
            summary.skipped += missed;
            slot.next_tick = current;
            if end.is_some_and(|end| due_of(slot) >= end) {
                slot.done = true;
                continue;
            }
        }

        let task = slot.task;
        let descriptor = slot.descriptor.as_ref().expect("runnable task has a descriptor");
        let reading = coordinator
            .with_endpoint(|ep| read_sensor(&task.sensor_id, descriptor, ep, task.slave, &task.retry))
            .unwrap_or_else(|e| {
                tracing::warn!(sensor = %task.sensor_id, error = %e, "port unavailable");
                Reading::failed(&task.sensor_id, clock.utc(), format!("port unavailable: {e}"))
            });
        record(summary, slot.sink.as_mut().expect("runnable task has a sink"), &reading);
        slot.next_tick += 1;
    }

    slots.iter().map(|s| s.index).zip(summaries).collect()
}

fn record(summary: &mut TaskSummary, sink: &mut CsvSink, reading: &Reading) {
    summary.ticks += 1;
    match reading.status {
        ReadingStatus::Ok => summary.ok += 1,
        ReadingStatus::PartialFailure => summary.partial += 1,
        ReadingStatus::Failed => summary.failed += 1,
    }
    if let Some(e) = &reading.error_detail {
        summary.last_error = Some(e.clone());
    }
    match sink.append(reading) {
        Ok(n) => summary.rows_written += n as u64,
        Err(e) => {
            if matches!(e, StorageError::StorageFull { .. }) {
                tracing::error!(sensor = %reading.sensor_id, error = %e, "storage full, row lost");
            } else {
                tracing::error!(sensor = %reading.sensor_id, error = %e, "writing row failed");
            }
            summary.storage_errors += 1;
            summary.last_error = Some(e.to_string());
        }
    }
}
