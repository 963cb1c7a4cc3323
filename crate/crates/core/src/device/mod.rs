//! Device side: the serial wire protocol, position/PWM mapping, a
//! speed-limited servo display simulator and the sinks playback writes to.

mod protocol;
mod servo;
mod sink;

use thiserror::Error;

pub use protocol::{
    crc8, decode_frame, encode_frame, height_to_position_byte, position_byte_to_height,
    position_byte_to_pulse_us, position_byte_to_pwm_ticks, DeviceFrame, StreamDecoder, FRAME_MAGIC,
    FRAME_TYPE_POSITIONS, WIRE_FRAME_LEN,
};
pub use servo::{sim_step, ServoModel, SimulatedDisplay};
pub use sink::{open_sink, PinSink, RecorderSink, SerialSink, SinkKind, SERIAL_BAUD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("CRC mismatch: computed 0x{expected:02X}, frame carries 0x{got:02X}")]
    Crc { expected: u8, got: u8 },
    #[error("height {height_mm} mm outside [0, {stroke_mm}]")]
    Range { height_mm: f64, stroke_mm: f64 },
    #[error("sink error: {0}")]
    Sink(String),
}
