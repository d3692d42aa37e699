use std::sync::Arc;

use chrono::Utc;
use modlog::clock::{Clock, SimClock};
use modlog::modbus::{
    append_crc, build_read_request, crc16, decode_value, parse_response, DataType, FrameError, FunctionCode,
    RequestPdu, SlaveAddress, ValueCodec, WordOrder,
};
use modlog::simulator::{VirtualBus, VirtualSlave};
use modlog::{Codec, Codec32};
use proptest::prelude::*;

/// Textbook bit-at-a-time CRC-16/MODBUS.
fn crc_oracle(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        crc ^= byte as u16;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xA001 } else { crc >> 1 };
        }
    }
    crc
}

fn function() -> impl Strategy<Value = FunctionCode> {
    prop_oneof![
        Just(FunctionCode::ReadHoldingRegisters),
        Just(FunctionCode::ReadInputRegisters)
    ]
}

fn bus_with(slave: u8, function: FunctionCode, start: u16, bank: &[u16]) -> VirtualBus {
    let clock: Arc<dyn Clock> = Arc::new(SimClock::new(Utc::now()));
    let mut bus = VirtualBus::new(clock);
    bus.attach_slave(VirtualSlave::new(SlaveAddress::new(slave).unwrap()).with_registers(function, start, bank))
        .unwrap();
    bus
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn table_crc_matches_bit_serial(data in prop::collection::vec(any::<u8>(), 0..300)) {
        prop_assert_eq!(crc16(&data), crc_oracle(&data));
    }

    #[test]
    fn crc_residue_is_zero(data in prop::collection::vec(any::<u8>(), 0..64)) {
        let mut frame = data.clone();
        append_crc(&mut frame);
        prop_assert_eq!(frame.len(), data.len() + 2);
        prop_assert_eq!(crc_oracle(&frame), 0);
        let crc = crc_oracle(&data);
        prop_assert_eq!(&frame[data.len()..], &[crc as u8, (crc >> 8) as u8][..]);
    }

    #[test]
    fn encode_simulate_parse_round_trip(
        slave in 1u8..=247,
        function in function(),
        base in 0u16..60_000,
        bank in prop::collection::vec(any::<u16>(), 1..200),
        offset_frac in 0.0f64..1.0,
        count_frac in 0.0f64..1.0,
    ) {
        let offset = ((bank.len() - 1) as f64 * offset_frac) as usize;
        let max_count = (bank.len() - offset).min(125);
        let count = 1 + ((max_count - 1) as f64 * count_frac) as usize;
        prop_assume!(base as usize + bank.len() <= 65_536);
        let mut bus = bus_with(slave, function, base, &bank);
        let req = RequestPdu::new(SlaveAddress::new(slave).unwrap(), function, base + offset as u16, count as u16).unwrap();
        let frame = build_read_request(&req);
        prop_assert_eq!(frame.len(), 8);
        prop_assert_eq!(crc_oracle(&frame), 0);
        let reply = bus.handle_request(&frame).expect("slave answers");
        prop_assert_eq!(reply.bytes.len(), req.response_len());
        let parsed = parse_response(&reply.bytes, &req).unwrap();
        prop_assert_eq!(parsed.slave.get(), slave);
        prop_assert_eq!(&parsed.words[..], &bank[offset..offset + count]);
    }

    #[test]
    fn float32_words_decode_to_the_same_bits(bits in any::<u32>(), low_first in any::<bool>()) {
        let f = f32::from_bits(bits);
        prop_assume!(f.is_finite());
        let (hi, lo) = ((bits >> 16) as u16, bits as u16);
        let (order, words) = if low_first { (WordOrder::LowWordFirst, [lo, hi]) } else { (WordOrder::HighWordFirst, [hi, lo]) };
        let c64 = Codec::new(DataType::Float32, order, 1.0, 0.0).unwrap();
        let c32 = Codec32::new(DataType::Float32, order, 1.0, 0.0).unwrap();
        prop_assert_eq!((decode_value(&words, &c64).unwrap() as f32).to_bits(), bits);
        prop_assert_eq!(decode_value(&words, &c32).unwrap().to_bits(), bits);
        prop_assert_eq!(c64.encode(decode_value(&words, &c64).unwrap()).unwrap(), words.to_vec());
    }

    #[test]
    fn integer_codecs_round_trip(raw in any::<u32>(), dt in prop::sample::select(vec![DataType::U16, DataType::S16, DataType::U32, DataType::S32]), scale_exp in -3i32..3) {
        let scale = 10f64.powi(scale_exp);
        let codec: ValueCodec<f64> = ValueCodec::new(dt, WordOrder::HighWordFirst, scale, 0.0).unwrap();
        let words: Vec<u16> = match dt {
            DataType::U16 | DataType::S16 => vec![raw as u16],
            _ => vec![(raw >> 16) as u16, raw as u16],
        };
        let value = decode_value(&words, &codec).unwrap();
        prop_assert_eq!(codec.encode(value).unwrap(), words);
    }

    #[test]
    fn simulator_survives_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..40)) {
        let mut bus = bus_with(1, FunctionCode::ReadHoldingRegisters, 0, &[1, 2, 3]);
        if let Some(reply) = bus.handle_request(&bytes) {
            // only well-formed requests addressed to slave 1 get answers
            prop_assert_eq!(bytes.len(), 8);
            prop_assert_eq!(bytes[0], 1);
            prop_assert_eq!(crc_oracle(&bytes), 0);
            prop_assert_eq!(crc_oracle(&reply.bytes), 0);
        }
    }
}

#[test]
fn every_single_bit_error_is_detected() {
    let req = RequestPdu::new(SlaveAddress::new(17).unwrap(), FunctionCode::ReadHoldingRegisters, 0x6B, 3).unwrap();
    let mut bus = bus_with(17, FunctionCode::ReadHoldingRegisters, 0x6B, &[0xAE41, 0x5652, 0x4340]);
    let frame = bus.handle_request(&build_read_request(&req)).unwrap().bytes;
    assert_eq!(parse_response(&frame, &req).unwrap().words, vec![0xAE41, 0x5652, 0x4340]);
    for bit in 0..frame.len() * 8 {
        let mut bad = frame.clone();
        bad[bit / 8] ^= 1 << (bit % 8);
        assert!(
            matches!(parse_response(&bad, &req), Err(FrameError::CrcMismatch { .. })),
            "bit {bit} flip not detected"
        );
    }
}

#[test]
fn scaled_values_are_correctly_rounded() {
    let c = Codec::new(DataType::S16, WordOrder::HighWordFirst, 0.1, 0.0).unwrap();
    assert_eq!(decode_value(&[112], &c).unwrap(), 11.2);
    assert_eq!(decode_value(&[(-1i16) as u16], &c).unwrap(), -0.1);
    let c = Codec::new(DataType::U16, WordOrder::HighWordFirst, 0.01, -40.0).unwrap();
    assert_eq!(decode_value(&[6523], &c).unwrap(), 65.23 - 40.0);
    let f = Codec::new(DataType::Float32, WordOrder::LowWordFirst, 1.0, 0.0).unwrap();
    let words = f.encode(412.53).unwrap();
    assert_eq!(decode_value(&words, &f).unwrap(), 412.53);
}
