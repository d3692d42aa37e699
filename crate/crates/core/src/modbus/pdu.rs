use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unicast Modbus slave address, 1..=247.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SlaveAddress(u8);

impl SlaveAddress {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 247;

    pub fn new(value: u8) -> Result<Self, PduError> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(PduError::InvalidSlaveAddress(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for SlaveAddress {
    type Error = PduError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SlaveAddress> for u8 {
    fn from(value: SlaveAddress) -> Self {
        value.0
    }
}

impl fmt::Display for SlaveAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionCode {
    #[serde(alias = "holding")]
    ReadHoldingRegisters,
    #[serde(alias = "input")]
    ReadInputRegisters,
}

impl FunctionCode {
    pub fn code(self) -> u8 {
        match self {
            FunctionCode::ReadHoldingRegisters => 0x03,
            FunctionCode::ReadInputRegisters => 0x04,
        }
    }

    /// Function byte carried by an exception response to this function.
    pub fn exception_code(self) -> u8 {
        self.code() | 0x80
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x03 => Some(FunctionCode::ReadHoldingRegisters),
            0x04 => Some(FunctionCode::ReadInputRegisters),
            _ => None,
        }
    }
}

impl fmt::Display for FunctionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionCode::ReadHoldingRegisters => f.write_str("holding"),
            FunctionCode::ReadInputRegisters => f.write_str("input"),
        }
    }
}

/// Exception code returned by a slave in place of data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExceptionCode {
    IllegalFunction,
    IllegalDataAddress,
    IllegalDataValue,
    SlaveDeviceFailure,
    /// Any other byte, preserved so unfamiliar devices stay diagnosable.
    Unknown(u8),
}

impl ExceptionCode {
    pub fn from_byte(b: u8) -> Self {
        match b {
            0x01 => ExceptionCode::IllegalFunction,
            0x02 => ExceptionCode::IllegalDataAddress,
            0x03 => ExceptionCode::IllegalDataValue,
            0x04 => ExceptionCode::SlaveDeviceFailure,
            other => ExceptionCode::Unknown(other),
        }
    }

    pub fn byte(self) -> u8 {
        match self {
            ExceptionCode::IllegalFunction => 0x01,
            ExceptionCode::IllegalDataAddress => 0x02,
            ExceptionCode::IllegalDataValue => 0x03,
            ExceptionCode::SlaveDeviceFailure => 0x04,
            ExceptionCode::Unknown(b) => b,
        }
    }
}

impl fmt::Display for ExceptionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExceptionCode::IllegalFunction => f.write_str("illegal function (0x01)"),
            ExceptionCode::IllegalDataAddress => f.write_str("illegal data address (0x02)"),
            ExceptionCode::IllegalDataValue => f.write_str("illegal data value (0x03)"),
            ExceptionCode::SlaveDeviceFailure => f.write_str("slave device failure (0x04)"),
            ExceptionCode::Unknown(b) => write!(f, "unknown exception (0x{b:02X})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PduError {
    #[error("slave address {0} out of range 1..=247")]
    InvalidSlaveAddress(u8),
    #[error("register count {0} out of range 1..=125")]
    InvalidRegisterCount(u16),
    #[error("register range {start}+{count} exceeds 65536")]
    RegisterRangeOverflow { start: u16, count: u16 },
}

/// A read request. Only valid requests can be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RequestPdu {
    slave: SlaveAddress,
    function: FunctionCode,
    start_register: u16,
    register_count: u16,
}

impl RequestPdu {
    pub const MAX_REGISTERS: u16 = 125;

    pub fn new(
        slave: SlaveAddress,
        function: FunctionCode,
        start_register: u16,
        register_count: u16,
    ) -> Result<Self, PduError> {
        if register_count == 0 || register_count > Self::MAX_REGISTERS {
            return Err(PduError::InvalidRegisterCount(register_count));
        }
        if start_register as u32 + register_count as u32 > 0x1_0000 {
            return Err(PduError::RegisterRangeOverflow {
                start: start_register,
                count: register_count,
            });
        }
        Ok(Self {
            slave,
            function,
            start_register,
            register_count,
        })
    }

    pub fn slave(&self) -> SlaveAddress {
        self.slave
    }

    pub fn function(&self) -> FunctionCode {
        self.function
    }

    pub fn start_register(&self) -> u16 {
        self.start_register
    }

    pub fn register_count(&self) -> u16 {
        self.register_count
    }

    /// Length in bytes of a normal (non-exception) RTU response to this request.
    pub fn response_len(&self) -> usize {
        5 + 2 * self.register_count as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponsePdu {
    pub slave: SlaveAddress,
    pub function: FunctionCode,
    pub words: Vec<u16>,
}
