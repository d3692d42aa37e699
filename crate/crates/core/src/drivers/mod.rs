//! Sensor drivers as data: register maps, the driver registry, and a full
//! read of one sensor over a transport.

mod descriptor;
mod read;
mod registry;

pub use descriptor::{
    DescriptorViolation, DriverDescriptor, OverrideError, RegisterMapping, RegisterOverride,
    Transform, ValueHook,
};
pub use read::{read_sensor, Measurement, Reading, ReadingStatus};
pub use registry::{DriverRegistry, RegistryError, TEMPLATE_YAML};
