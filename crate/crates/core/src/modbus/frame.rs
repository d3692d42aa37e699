use thiserror::Error;

use super::crc::{append_crc, crc16};
use super::pdu::{ExceptionCode, RequestPdu, ResponsePdu, SlaveAddress};

/// Smallest valid RTU response: address, function, one data byte, CRC.
const MIN_RESPONSE_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame too short ({len} bytes)")]
    FrameTooShort { len: usize },
    #[error("CRC mismatch: computed 0x{computed:04X}, received 0x{received:04X}")]
    CrcMismatch { computed: u16, received: u16 },
    #[error("response from slave {received}, expected {expected}")]
    SlaveMismatch { expected: SlaveAddress, received: u8 },
    #[error("function 0x{received:02X} in response, expected 0x{expected:02X}")]
    FunctionMismatch { expected: u8, received: u8 },
    #[error("byte count mismatch: expected {expected}, got {received} (frame length {frame_len})")]
    ByteCountMismatch {
        expected: usize,
        received: usize,
        frame_len: usize,
    },
    #[error("modbus exception: {0}")]
    Exception(ExceptionCode),
}

/// Encodes `pdu` as an 8-byte RTU read frame.
pub fn build_read_request(pdu: &RequestPdu) -> Vec<u8> {
    let mut frame = Vec::with_capacity(8);
    frame.push(pdu.slave().get());
    frame.push(pdu.function().code());
    frame.extend_from_slice(&pdu.start_register().to_be_bytes());
    frame.extend_from_slice(&pdu.register_count().to_be_bytes());
    append_crc(&mut frame);
    frame
}

/// Validates `frame` as the answer to `expected` and decodes its register words.
///
/// Checks run in a fixed order: length, CRC, slave, function (or exception),
/// byte count.
pub fn parse_response(frame: &[u8], expected: &RequestPdu) -> Result<ResponsePdu, FrameError> {
    if frame.len() < MIN_RESPONSE_LEN {
        return Err(FrameError::FrameTooShort { len: frame.len() });
    }
    let body_len = frame.len() - 2;
    if crc16(frame) != 0 {
        return Err(FrameError::CrcMismatch {
            computed: crc16(&frame[..body_len]),
            received: u16::from_le_bytes([frame[body_len], frame[body_len + 1]]),
        });
    }
    if frame[0] != expected.slave().get() {
        return Err(FrameError::SlaveMismatch {
            expected: expected.slave(),
            received: frame[0],
        });
    }
    let function = expected.function();
    if frame[1] == function.exception_code() {
        return Err(FrameError::Exception(ExceptionCode::from_byte(frame[2])));
    }
    if frame[1] != function.code() {
        return Err(FrameError::FunctionMismatch {
            expected: function.code(),
            received: frame[1],
        });
    }
    let expected_bytes = 2 * expected.register_count() as usize;
    let byte_count = frame[2] as usize;
    if byte_count != expected_bytes || body_len != 3 + byte_count {
        return Err(FrameError::ByteCountMismatch {
            expected: expected_bytes,
            received: byte_count,
            frame_len: frame.len(),
        });
    }
    let words = frame[3..body_len]
        .chunks_exact(2)
        .map(|w| u16::from_be_bytes([w[0], w[1]]))
        .collect();
    Ok(ResponsePdu {
        slave: expected.slave(),
        function,
        words,
    })
}
