//! Modbus RTU wire format: CRC, read requests, response parsing and register
//! value decoding. Everything here is a pure function on values.

mod codec;
mod crc;
mod frame;
mod pdu;

pub use codec::{decode_value, CodecError, DataType, ValueCodec, WordOrder};
pub use crc::{append_crc, crc16, has_valid_crc};
pub use frame::{build_read_request, parse_response, FrameError};
pub use pdu::{ExceptionCode, FunctionCode, PduError, RequestPdu, ResponsePdu, SlaveAddress};
