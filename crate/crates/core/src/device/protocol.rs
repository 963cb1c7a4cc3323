//! Serial wire format for one pin command.
//!
//! ```text
//! offset  0     1     2     3..=27          28
//!         0xA5  0x01  seq   25 positions    CRC-8 over bytes 1..=27
//! ```
//!
//! CRC-8 uses polynomial 0x07, init 0x00, no reflection, no final xor.
//! Positions map 0..=255 linearly onto 0..=stroke, row-major.

use crc::{Crc, CRC_8_SMBUS};

use crate::model::{DisplayProfile, PinFrame, PIN_COUNT};

use super::DeviceError;

pub const FRAME_MAGIC: u8 = 0xA5;
pub const FRAME_TYPE_POSITIONS: u8 = 0x01;
pub const WIRE_FRAME_LEN: usize = 3 + PIN_COUNT + 1;

const CRC8: Crc<u8> = Crc::<u8>::new(&CRC_8_SMBUS);

pub fn crc8(bytes: &[u8]) -> u8 {
    CRC8.checksum(bytes)
}

/// Quantized positions for all 25 pins plus a rolling sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeviceFrame {
    pub seq: u8,
    pub positions: [u8; PIN_COUNT],
}

impl DeviceFrame {
    pub fn new(seq: u8, positions: [u8; PIN_COUNT]) -> Self {
        Self { seq, positions }
    }

    pub fn from_pin_frame(
        frame: &PinFrame,
        profile: &DisplayProfile,
        seq: u8,
    ) -> Result<Self, DeviceError> {
        let mut positions = [0u8; PIN_COUNT];
        for (p, &h) in positions.iter_mut().zip(frame.heights_mm.iter()) {
            *p = height_to_position_byte(h, profile)?;
        }
        Ok(Self { seq, positions })
    }

    /// Heights implied by the positions.
    pub fn heights_mm(&self, profile: &DisplayProfile) -> [f64; PIN_COUNT] {
        let mut h = [0.0; PIN_COUNT];
        for (out, &p) in h.iter_mut().zip(self.positions.iter()) {
            *out = position_byte_to_height(p, profile);
        }
        h
    }
}

/// `round(255 * h / stroke)`; heights outside `[0, stroke]` are rejected.
pub fn height_to_position_byte(h_mm: f64, profile: &DisplayProfile) -> Result<u8, DeviceError> {
    if !(h_mm >= 0.0 && h_mm <= profile.stroke_mm) {
        return Err(DeviceError::Range {
            height_mm: h_mm,
            stroke_mm: profile.stroke_mm,
        });
    }
    Ok((255.0 * h_mm / profile.stroke_mm).round() as u8)
}

pub fn position_byte_to_height(p: u8, profile: &DisplayProfile) -> f64 {
    p as f64 / 255.0 * profile.stroke_mm
}

/// Servo pulse width for a position byte: 500 us at 0 to 2500 us at 255.
pub fn position_byte_to_pulse_us(p: u8) -> f64 {
    500.0 + p as f64 / 255.0 * 2000.0
}

/// 12-bit PWM on-ticks at 50 Hz (20 ms period) for a position byte.
pub fn position_byte_to_pwm_ticks(p: u8) -> u16 {
    (position_byte_to_pulse_us(p) * 4096.0 / 20_000.0).round() as u16
}

pub fn encode_frame(frame: &DeviceFrame) -> [u8; WIRE_FRAME_LEN] {
    let mut out = [0u8; WIRE_FRAME_LEN];
    out[0] = FRAME_MAGIC;
    out[1] = FRAME_TYPE_POSITIONS;
    out[2] = frame.seq;
    out[3..3 + PIN_COUNT].copy_from_slice(&frame.positions);
    out[WIRE_FRAME_LEN - 1] = crc8(&out[1..WIRE_FRAME_LEN - 1]);
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<DeviceFrame, DeviceError> {
    if bytes.len() != WIRE_FRAME_LEN {
        return Err(DeviceError::Protocol(format!(
            "frame is {} bytes, expected {WIRE_FRAME_LEN}",
            bytes.len()
        )));
    }
    if bytes[0] != FRAME_MAGIC {
        return Err(DeviceError::Protocol(format!(
            "bad magic 0x{:02X}",
            bytes[0]
        )));
    }
    let expected = crc8(&bytes[1..WIRE_FRAME_LEN - 1]);
    let got = bytes[WIRE_FRAME_LEN - 1];
    if expected != got {
        return Err(DeviceError::Crc { expected, got });
    }
    if bytes[1] != FRAME_TYPE_POSITIONS {
        return Err(DeviceError::Protocol(format!(
            "unknown frame type 0x{:02X}",
            bytes[1]
        )));
    }
    let mut positions = [0u8; PIN_COUNT];
    positions.copy_from_slice(&bytes[3..3 + PIN_COUNT]);
    Ok(DeviceFrame {
        seq: bytes[2],
        positions,
    })
}

/// Reassembles frames from an arbitrary chunked byte stream, resyncing on the
/// magic byte after garbage or corruption.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Result<DeviceFrame, DeviceError>> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        loop {
            match self.buf.iter().position(|&b| b == FRAME_MAGIC) {
                Some(0) => {}
                Some(start) => {
                    self.buf.drain(..start);
                }
                None => {
                    self.buf.clear();
                    break;
                }
            }
            if self.buf.len() < WIRE_FRAME_LEN {
                break;
            }
            match decode_frame(&self.buf[..WIRE_FRAME_LEN]) {
                Ok(frame) => {
                    self.buf.drain(..WIRE_FRAME_LEN);
                    out.push(Ok(frame));
                }
                Err(e) => {
                    self.buf.drain(..1);
                    out.push(Err(e));
                }
            }
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bit-at-a-time CRC-8 (poly 0x07, init 0), independent of the table
    /// implementation.
    fn crc8_bitwise(bytes: &[u8]) -> u8 {
        let mut crc = 0u8;
        for &b in bytes {
            crc ^= b;
            for _ in 0..8 {
                crc = if crc & 0x80 != 0 {
                    (crc << 1) ^ 0x07
                } else {
                    crc << 1
                };
            }
        }
        crc
    }

    #[test]
    fn crc_matches_bitwise_oracle() {
        assert_eq!(crc8_bitwise(b"123456789"), 0xF4);
        assert_eq!(crc8(b"123456789"), 0xF4);
        for len in 0..64usize {
            let data: Vec<u8> = (0..len).map(|i| (i * 37 + 11) as u8).collect();
            assert_eq!(crc8(&data), crc8_bitwise(&data));
        }
    }

    #[test]
    fn all_zero_frame_bytes() {
        let bytes = encode_frame(&DeviceFrame::new(0, [0; PIN_COUNT]));
        let mut covered = vec![0x01, 0x00];
        covered.extend_from_slice(&[0u8; PIN_COUNT]);
        // Frozen from the bitwise oracle: CRC-8 of [01, 00, 00 x 25].
        assert_eq!(crc8_bitwise(&covered), 0x3E);
        let mut expected = vec![0xA5, 0x01, 0x00];
        expected.extend_from_slice(&[0u8; PIN_COUNT]);
        expected.push(0x3E);
        assert_eq!(bytes.to_vec(), expected);
        assert_eq!(bytes.len(), 29);
    }

    #[test]
    fn decode_errors() {
        let good = encode_frame(&DeviceFrame::new(9, [7; PIN_COUNT]));
        let mut bad_magic = good;
        bad_magic[0] = 0x5A;
        assert!(matches!(
            decode_frame(&bad_magic),
            Err(DeviceError::Protocol(_))
        ));
        assert!(matches!(
            decode_frame(&good[..28]),
            Err(DeviceError::Protocol(_))
        ));
        let mut bad_crc = good;
        bad_crc[28] ^= 0x01;
        assert!(matches!(
            decode_frame(&bad_crc),
            Err(DeviceError::Crc { .. })
        ));
    }

    #[test]
    fn mapping_examples() {
        let p = DisplayProfile::large();
        assert_eq!(height_to_position_byte(0.0, &p).unwrap(), 0);
        assert_eq!(height_to_position_byte(10.0, &p).unwrap(), 255);
        assert!(matches!(
            height_to_position_byte(10.01, &p),
            Err(DeviceError::Range { .. })
        ));
        assert!(height_to_position_byte(-0.01, &p).is_err());
        assert_eq!(position_byte_to_pwm_ticks(0), 102);
        assert_eq!(position_byte_to_pwm_ticks(255), 512);
        assert!((position_byte_to_pulse_us(127) - 1496.078431).abs() < 1e-5);
        assert_eq!(position_byte_to_pwm_ticks(127), 306);
    }

    #[test]
    fn stream_decoder_resyncs() {
        let a = encode_frame(&DeviceFrame::new(1, [3; PIN_COUNT]));
        let b = encode_frame(&DeviceFrame::new(2, [250; PIN_COUNT]));
        let mut corrupt = a;
        corrupt[10] ^= 0xFF;
        let mut stream = vec![0x00, 0x13, 0xA5];
        stream.extend_from_slice(&corrupt);
        stream.extend_from_slice(&a);
        stream.extend_from_slice(&b);
        let mut dec = StreamDecoder::new();
        let mut frames = Vec::new();
        for chunk in stream.chunks(5) {
            frames.extend(dec.push(chunk).into_iter().filter_map(Result::ok));
        }
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].seq, 1);
        assert_eq!(frames[1].seq, 2);
        assert_eq!(frames[1].positions, [250; PIN_COUNT]);
    }

    proptest! {
        #[test]
        fn round_trip(seq in any::<u8>(), positions in prop::array::uniform25(any::<u8>())) {
            let f = DeviceFrame::new(seq, positions);
            prop_assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
        }

        #[test]
        fn quantization_error_bound(h in 0.0f64..=10.0) {
            let p = DisplayProfile::large();
            let back = position_byte_to_height(height_to_position_byte(h, &p).unwrap(), &p);
            prop_assert!((back - h).abs() <= p.stroke_mm / 510.0 + 1e-12);
        }
    }
}
