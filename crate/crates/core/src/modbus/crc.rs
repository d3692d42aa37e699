//! CRC-16/MODBUS: reflected polynomial 0x8005 (0xA001 reversed), init 0xFFFF,
//! no final xor. Transmitted low byte first.

const POLY_REFLECTED: u16 = 0xA001;

const TABLE: [u16; 256] = build_table();

const fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ POLY_REFLECTED
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

pub fn crc16(payload: &[u8]) -> u16 {
    payload.iter().fold(0xFFFF, |crc, &b| {
        (crc >> 8) ^ TABLE[((crc ^ b as u16) & 0xFF) as usize]
    })
}

/// Appends the CRC of `frame` to itself, low byte first.
pub fn append_crc(frame: &mut Vec<u8>) {
    let crc = crc16(frame);
    frame.extend_from_slice(&crc.to_le_bytes());
}

/// True when `frame` ends in a correct CRC (residue over the whole frame is zero).
pub fn has_valid_crc(frame: &[u8]) -> bool {
    frame.len() >= 3 && crc16(frame) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_payload_is_initial_value() {
        assert_eq!(crc16(&[]), 0xFFFF);
    }

    #[test]
    fn check_value() {
        assert_eq!(crc16(b"123456789"), 0x4B37);
    }

    #[test]
    fn residue_is_zero() {
        let mut f = vec![0x11, 0x03, 0x00, 0x6B, 0x00, 0x03];
        append_crc(&mut f);
        // Well-known frame from the Modbus over serial line guide.
        assert_eq!(&f[6..], &[0x76, 0x87]);
        assert_eq!(crc16(&f), 0);
        assert!(has_valid_crc(&f));
    }
}
