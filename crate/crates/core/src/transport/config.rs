use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUPPORTED_BAUDS: [u32; 8] = [1200, 2400, 4800, 9600, 19200, 38400, 57600, 115200];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unsupported baud rate {0} (expected one of 1200, 2400, 4800, 9600, 19200, 38400, 57600, 115200)")]
    UnsupportedBaud(u32),
    #[error("byte size {0} not supported (7 or 8)")]
    InvalidByteSize(u8),
    #[error("7 data bits require even or odd parity")]
    SevenBitsWithoutParity,
    #[error("stop bits must be 1 or 2, got {0}")]
    InvalidStopBits(u8),
    #[error("retry attempts must be 1..=10, got {0}")]
    InvalidAttempts(u8),
    #[error("retry timeout must be positive")]
    ZeroTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    None,
    Even,
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum StopBits {
    One,
    Two,
}

impl StopBits {
    pub fn count(self) -> u8 {
        match self {
            StopBits::One => 1,
            StopBits::Two => 2,
        }
    }
}

impl TryFrom<u8> for StopBits {
    type Error = ConfigError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(StopBits::One),
            2 => Ok(StopBits::Two),
            n => Err(ConfigError::InvalidStopBits(n)),
        }
    }
}

impl From<StopBits> for u8 {
    fn from(value: StopBits) -> Self {
        value.count()
    }
}

/// Character framing and speed of a serial line, without the device path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLine", into = "RawLine")]
pub struct LineSettings {
    baud: u32,
    parity: Parity,
    stop_bits: StopBits,
    byte_size: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    baud: u32,
    parity: Parity,
    stop_bits: StopBits,
    byte_size: u8,
}

impl TryFrom<RawLine> for LineSettings {
    type Error = ConfigError;

    fn try_from(r: RawLine) -> Result<Self, Self::Error> {
        LineSettings::new(r.baud, r.parity, r.stop_bits, r.byte_size)
    }
}

impl From<LineSettings> for RawLine {
    fn from(l: LineSettings) -> Self {
        RawLine {
            baud: l.baud,
            parity: l.parity,
            stop_bits: l.stop_bits,
            byte_size: l.byte_size,
        }
    }
}

impl LineSettings {
    pub fn new(baud: u32, parity: Parity, stop_bits: StopBits, byte_size: u8) -> Result<Self, ConfigError> {
        if !SUPPORTED_BAUDS.contains(&baud) {
            return Err(ConfigError::UnsupportedBaud(baud));
        }
        if byte_size != 7 && byte_size != 8 {
            return Err(ConfigError::InvalidByteSize(byte_size));
        }
        if byte_size == 7 && parity == Parity::None {
            return Err(ConfigError::SevenBitsWithoutParity);
        }
        Ok(Self {
            baud,
            parity,
            stop_bits,
            byte_size,
        })
    }

    pub fn baud(&self) -> u32 {
        self.baud
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn stop_bits(&self) -> StopBits {
        self.stop_bits
    }

    pub fn byte_size(&self) -> u8 {
        self.byte_size
    }

    /// Start bit + data bits + parity bit + stop bits.
    pub fn bits_per_char(&self) -> u32 {
        1 + self.byte_size as u32 + u32::from(self.parity != Parity::None) + self.stop_bits.count() as u32
    }
}

impl Default for LineSettings {
    /// Modbus serial line default: 19200 baud, 8 data bits, even parity, 1 stop bit.
    fn default() -> Self {
        Self {
            baud: 19200,
            parity: Parity::Even,
            stop_bits: StopBits::One,
            byte_size: 8,
        }
    }
}

impl fmt::Display for LineSettings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.parity {
            Parity::None => 'N',
            Parity::Even => 'E',
            Parity::Odd => 'O',
        };
        write!(f, "{} {}{}{}", self.baud, self.byte_size, p, self.stop_bits.count())
    }
}

/// A serial device plus its line settings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SerialConfig {
    pub port: String,
    #[serde(flatten)]
    pub line: LineSettings,
}

impl SerialConfig {
    pub fn new(port: impl Into<String>, line: LineSettings) -> Self {
        Self {
            port: port.into(),
            line,
        }
    }
}

/// Mandatory bus silence before a frame: 3.5 character times, but never less
/// than 1750 µs above 19200 baud.
pub fn inter_frame_delay(line: &LineSettings) -> Duration {
    let micros = (3.5 * line.bits_per_char() as f64 * 1e6 / line.baud as f64).round() as u64;
    if line.baud > 19200 {
        Duration::from_micros(micros.max(1750))
    } else {
        Duration::from_micros(micros)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRetry", into = "RawRetry")]
pub struct RetryPolicy {
    attempts: u8,
    timeout: Duration,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRetry {
    #[serde(default = "default_attempts")]
    attempts: u8,
    #[serde(default = "default_timeout_ms")]
    timeout_ms: u64,
}

fn default_attempts() -> u8 {
    RetryPolicy::DEFAULT_ATTEMPTS
}

fn default_timeout_ms() -> u64 {
    RetryPolicy::DEFAULT_TIMEOUT_MS
}

impl TryFrom<RawRetry> for RetryPolicy {
    type Error = ConfigError;

    fn try_from(r: RawRetry) -> Result<Self, Self::Error> {
        RetryPolicy::new(r.attempts, Duration::from_millis(r.timeout_ms))
    }
}

impl From<RetryPolicy> for RawRetry {
    fn from(p: RetryPolicy) -> Self {
        RawRetry {
            attempts: p.attempts,
            timeout_ms: p.timeout.as_millis() as u64,
        }
    }
}

impl RetryPolicy {
    pub const DEFAULT_ATTEMPTS: u8 = 3;
    pub const DEFAULT_TIMEOUT_MS: u64 = 1000;
    pub const MAX_ATTEMPTS: u8 = 10;

    pub fn new(attempts: u8, timeout: Duration) -> Result<Self, ConfigError> {
        if attempts == 0 || attempts > Self::MAX_ATTEMPTS {
            return Err(ConfigError::InvalidAttempts(attempts));
        }
        if timeout.is_zero() {
            return Err(ConfigError::ZeroTimeout);
        }
        Ok(Self { attempts, timeout })
    }

    pub fn attempts(&self) -> u8 {
        self.attempts
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: Self::DEFAULT_ATTEMPTS,
            timeout: Duration::from_millis(Self::DEFAULT_TIMEOUT_MS),
        }
    }
}
