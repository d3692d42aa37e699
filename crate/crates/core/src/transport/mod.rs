//! Request/response channel over a half-duplex serial line.
//!
//! An [`Endpoint`] talks to either a real serial device or an in-memory
//! [`VirtualBus`](crate::simulator::VirtualBus). It enforces the RTU silent
//! interval, detects frame completion from the expected response length and
//! retries on timeouts and CRC failures.

mod config;

use std::io;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::clock::Clock;
use crate::modbus::has_valid_crc;
use crate::simulator::SharedBus;

pub use config::{
    inter_frame_delay, ConfigError, LineSettings, Parity, RetryPolicy, SerialConfig, StopBits,
    SUPPORTED_BAUDS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("serial port {0} not found")]
    PortNotFound(String),
    #[error("serial port {0} is busy (opened by another process)")]
    PortBusy(String),
    #[error("permission denied opening serial port {0}")]
    PermissionDenied(String),
    #[error("cannot open serial port {port}: {detail}")]
    Open { port: String, detail: String },
    #[error("no response after {attempts} attempt(s) of {timeout_ms} ms")]
    Timeout { attempts: u8, timeout_ms: u64 },
    #[error("transport closed")]
    TransportClosed,
    #[error("serial I/O error: {0}")]
    Io(String),
}

/// Which backend [`open_endpoint`] should use.
#[derive(Clone)]
pub enum BackendSelector {
    RealSerial,
    Virtual(SharedBus),
}

enum Backend {
    Real(Box<dyn serialport::SerialPort>),
    Virtual(SharedBus),
    Closed,
}

/// One open serial line. Transactions take `&mut self`, so at most one is
/// ever in flight.
pub struct Endpoint {
    config: SerialConfig,
    backend: Backend,
    clock: Arc<dyn Clock>,
    last_activity: Option<Duration>,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let backend = match self.backend {
            Backend::Real(_) => "real",
            Backend::Virtual(_) => "virtual",
            Backend::Closed => "closed",
        };
        f.debug_struct("Endpoint")
            .field("config", &self.config)
            .field("backend", &backend)
            .field("last_activity", &self.last_activity)
            .finish()
    }
}

pub fn open_endpoint(
    config: &SerialConfig,
    selector: BackendSelector,
    clock: Arc<dyn Clock>,
) -> Result<Endpoint, TransportError> {
    let backend = match selector {
        BackendSelector::Virtual(bus) => Backend::Virtual(bus),
        BackendSelector::RealSerial => Backend::Real(open_real(config)?),
    };
    Ok(Endpoint {
        config: config.clone(),
        backend,
        clock,
        last_activity: None,
    })
}

fn open_real(config: &SerialConfig) -> Result<Box<dyn serialport::SerialPort>, TransportError> {
    let port = config.port.clone();
    if !Path::new(&port).exists() {
        return Err(TransportError::PortNotFound(port));
    }
    let line = &config.line;
    let builder = serialport::new(&port, line.baud())
        .data_bits(match line.byte_size() {
            7 => serialport::DataBits::Seven,
            _ => serialport::DataBits::Eight,
        })
        .parity(match line.parity() {
            Parity::None => serialport::Parity::None,
            Parity::Even => serialport::Parity::Even,
            Parity::Odd => serialport::Parity::Odd,
        })
        .stop_bits(match line.stop_bits() {
            StopBits::One => serialport::StopBits::One,
            StopBits::Two => serialport::StopBits::Two,
        })
        .flow_control(serialport::FlowControl::None)
        .timeout(Duration::from_millis(20));
    builder.open().map_err(|e| classify_open_error(port, e))
}

fn classify_open_error(port: String, e: serialport::Error) -> TransportError {
    use serialport::ErrorKind;
    let detail = e.description.to_lowercase();
    match e.kind {
        ErrorKind::Io(io::ErrorKind::PermissionDenied) => TransportError::PermissionDenied(port),
        ErrorKind::Io(io::ErrorKind::NotFound) => TransportError::PortNotFound(port),
        _ if detail.contains("busy") => TransportError::PortBusy(port),
        _ if detail.contains("permission") => TransportError::PermissionDenied(port),
        ErrorKind::NoDevice if !Path::new(&port).exists() => TransportError::PortNotFound(port),
        _ => TransportError::Open {
            port,
            detail: e.description,
        },
    }
}

/// Expected length of a complete reply to `request`, given the bytes received
/// so far. `None` when the request is not a read we understand.
fn expected_reply_len(request: &[u8], received: &[u8]) -> Option<usize> {
    if request.len() != 8 || !matches!(request[1], 0x03 | 0x04) {
        return None;
    }
    if received.len() >= 2 && received[1] & 0x80 != 0 {
        return Some(5);
    }
    let count = u16::from_be_bytes([request[4], request[5]]) as usize;
    Some(5 + 2 * count)
}

enum Attempt {
    Frame(Vec<u8>),
    Silence,
}

impl Endpoint {
    pub fn config(&self) -> &SerialConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Clock time at which the line last went idle.
    pub fn last_activity(&self) -> Option<Duration> {
        self.last_activity
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self.backend, Backend::Virtual(_))
    }

    pub fn close(&mut self) {
        self.backend = Backend::Closed;
    }

    /// Sends `request` and returns the first reply with a valid CRC.
    ///
    /// Timeouts and CRC failures are retried up to `policy.attempts()` times.
    /// If replies arrived but none had a valid CRC, the last one is returned
    /// so the caller's parse step can report the mismatch.
    pub fn transact(&mut self, request: &[u8], policy: &RetryPolicy) -> Result<Vec<u8>, TransportError> {
        let mut last_corrupt = None;
        for attempt in 1..=policy.attempts() {
            self.wait_silent_interval();
            let outcome = match &mut self.backend {
                Backend::Closed => return Err(TransportError::TransportClosed),
                Backend::Virtual(bus) => virtual_attempt(bus, &*self.clock, request, policy.timeout()),
                Backend::Real(port) => real_attempt(port.as_mut(), &*self.clock, request, policy.timeout())?,
            };
            self.last_activity = Some(self.clock.monotonic());
            match outcome {
                Attempt::Frame(bytes) if has_valid_crc(&bytes) => return Ok(bytes),
                Attempt::Frame(bytes) => {
                    tracing::debug!(attempt, port = %self.config.port, "reply failed CRC check");
                    last_corrupt = Some(bytes);
                }
                Attempt::Silence => {
                    tracing::debug!(attempt, port = %self.config.port, "no reply before timeout");
                }
            }
        }
        last_corrupt.ok_or(TransportError::Timeout {
            attempts: policy.attempts(),
            timeout_ms: policy.timeout().as_millis() as u64,
        })
    }

    fn wait_silent_interval(&self) {
        if let Some(last) = self.last_activity {
            self.clock
                .sleep_until(last + inter_frame_delay(&self.config.line));
        }
    }
}

fn virtual_attempt(bus: &SharedBus, clock: &dyn Clock, request: &[u8], timeout: Duration) -> Attempt {
    let reply = bus.lock().unwrap().handle_request(request);
    let sent_at = clock.monotonic();
    match reply {
        Some(reply) if reply.delay <= timeout => {
            clock.sleep_until(sent_at + reply.delay);
            bus.lock().unwrap().record_reply(&reply.bytes);
            Attempt::Frame(reply.bytes)
        }
        _ => {
            clock.sleep_until(sent_at + timeout);
            Attempt::Silence
        }
    }
}

fn real_attempt(
    port: &mut dyn serialport::SerialPort,
    clock: &dyn Clock,
    request: &[u8],
    timeout: Duration,
) -> Result<Attempt, TransportError> {
    let _ = port.clear(serialport::ClearBuffer::Input);
    port.write_all(request).map_err(io_error)?;
    port.flush().map_err(io_error)?;
    let deadline = clock.monotonic() + timeout;
    let mut received = Vec::with_capacity(256);
    let mut chunk = [0u8; 256];
    loop {
        if let Some(want) = expected_reply_len(request, &received) {
            if received.len() >= want {
                received.truncate(want);
                return Ok(Attempt::Frame(received));
            }
        }
        if clock.monotonic() >= deadline {
            break;
        }
        match port.read(&mut chunk) {
            Ok(0) => return Err(TransportError::TransportClosed),
            Ok(n) => received.extend_from_slice(&chunk[..n]),
            Err(e) if e.kind() == io::ErrorKind::TimedOut || e.kind() == io::ErrorKind::WouldBlock => {}
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(io_error(e)),
        }
    }
    if received.is_empty() {
        Ok(Attempt::Silence)
    } else {
        Ok(Attempt::Frame(received))
    }
}

fn io_error(e: io::Error) -> TransportError {
    match e.kind() {
        io::ErrorKind::BrokenPipe | io::ErrorKind::NotConnected | io::ErrorKind::UnexpectedEof => {
            TransportError::TransportClosed
        }
        _ => TransportError::Io(e.to_string()),
    }
}
