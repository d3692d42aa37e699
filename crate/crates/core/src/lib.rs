//! Modbus RTU data logging for RS-485 environmental sensors.
//!
//! Sensors are described by declarative driver files, polled over a serial
//! line (or the built-in [`simulator`] bus), and logged to daily CSV files
//! with a JSON metadata sidecar. A single YAML inventory configures hosts and
//! sensors.

pub mod clock;
pub mod drivers;
pub mod inventory;
pub mod logger;
pub mod modbus;
pub mod scalar;
pub mod simulator;
pub mod transport;

pub use scalar::Scalar;

/// Register value codec used throughout the logger.
pub type Codec = modbus::ValueCodec<f64>;
/// Single-precision codec, for memory-constrained consumers.
pub type Codec32 = modbus::ValueCodec<f32>;

/// Version string written into metadata files.
pub const SOFTWARE_VERSION: &str = concat!("modlog ", env!("CARGO_PKG_VERSION"));
