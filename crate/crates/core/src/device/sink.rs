use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use crate::model::{DisplayProfile, PinFrame};

use super::{encode_frame, DeviceError, DeviceFrame, SimulatedDisplay};

pub const SERIAL_BAUD: u32 = 115_200;

/// Consumer of pin frames: a recorder, the simulator, or hardware.
pub trait PinSink: Send {
    fn send(&mut self, frame: &PinFrame) -> Result<(), DeviceError>;

    /// Frames this sink has recorded or achieved, if it keeps any.
    fn trace(&self) -> Option<&[PinFrame]> {
        None
    }

    fn close(&mut self) -> Result<(), DeviceError> {
        Ok(())
    }

    fn describe(&self) -> String;
}

impl<S: PinSink + ?Sized> PinSink for Box<S> {
    fn send(&mut self, frame: &PinFrame) -> Result<(), DeviceError> {
        (**self).send(frame)
    }

    fn trace(&self) -> Option<&[PinFrame]> {
        (**self).trace()
    }

    fn close(&mut self) -> Result<(), DeviceError> {
        (**self).close()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Keeps every frame exactly as sent.
#[derive(Debug, Default, Clone)]
pub struct RecorderSink {
    frames: Vec<PinFrame>,
}

impl RecorderSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames(&self) -> &[PinFrame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<PinFrame> {
        self.frames
    }
}

impl PinSink for RecorderSink {
    fn send(&mut self, frame: &PinFrame) -> Result<(), DeviceError> {
        self.frames.push(*frame);
        Ok(())
    }

    fn trace(&self) -> Option<&[PinFrame]> {
        Some(&self.frames)
    }

    fn describe(&self) -> String {
        "ideal-recorder".into()
    }
}

/// Writes encoded device frames to a byte stream, normally a serial port.
pub struct SerialSink {
    port: Box<dyn Write + Send>,
    profile: DisplayProfile,
    seq: u8,
    label: String,
}

impl SerialSink {
    pub fn from_writer(port: Box<dyn Write + Send>, profile: DisplayProfile, label: &str) -> Self {
        Self {
            port,
            profile,
            seq: 0,
            label: label.to_string(),
        }
    }

    /// Open `path` at 115200 8N1.
    #[cfg(feature = "serial")]
    pub fn open(path: &std::path::Path, profile: DisplayProfile) -> Result<Self, DeviceError> {
        let name = path.to_string_lossy().into_owned();
        let port = serialport::new(&name, SERIAL_BAUD)
            .data_bits(serialport::DataBits::Eight)
            .parity(serialport::Parity::None)
            .stop_bits(serialport::StopBits::One)
            .flow_control(serialport::FlowControl::None)
            .timeout(std::time::Duration::from_millis(200))
            .open()
            .map_err(|e| DeviceError::Sink(format!("serial {name}: {e}")))?;
        Ok(Self::from_writer(
            Box::new(port),
            profile,
            &format!("serial:{name}"),
        ))
    }

    #[cfg(not(feature = "serial"))]
    pub fn open(path: &std::path::Path, _profile: DisplayProfile) -> Result<Self, DeviceError> {
        Err(DeviceError::Sink(format!(
            "serial {}: built without serial support",
            path.display()
        )))
    }
}

impl PinSink for SerialSink {
    fn send(&mut self, frame: &PinFrame) -> Result<(), DeviceError> {
        let device = DeviceFrame::from_pin_frame(frame, &self.profile, self.seq)?;
        self.seq = self.seq.wrapping_add(1);
        self.port
            .write_all(&encode_frame(&device))
            .and_then(|_| self.port.flush())
            .map_err(|e| DeviceError::Sink(format!("{}: {e}", self.label)))
    }

    fn close(&mut self) -> Result<(), DeviceError> {
        self.port
            .flush()
            .map_err(|e| DeviceError::Sink(format!("{}: {e}", self.label)))
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkKind {
    IdealRecorder,
    SimulatedDisplay,
    Serial(PathBuf),
}

impl FromStr for SinkKind {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ideal" | "recorder" | "ideal-recorder" => Ok(SinkKind::IdealRecorder),
            "sim" | "simulated" | "simulated-display" => Ok(SinkKind::SimulatedDisplay),
            other => match other.strip_prefix("serial:") {
                Some(path) if !path.is_empty() => Ok(SinkKind::Serial(PathBuf::from(path))),
                _ => Err(DeviceError::Sink(format!("unknown sink {other:?}"))),
            },
        }
    }
}

pub fn open_sink(
    kind: &SinkKind,
    profile: DisplayProfile,
) -> Result<Box<dyn PinSink>, DeviceError> {
    match kind {
        SinkKind::IdealRecorder => Ok(Box::new(RecorderSink::new())),
        SinkKind::SimulatedDisplay => Ok(Box::new(SimulatedDisplay::new(profile))),
        SinkKind::Serial(path) => {
            if !path.exists() {
                return Err(DeviceError::Sink(format!(
                    "serial {}: no such device",
                    path.display()
                )));
            }
            Ok(Box::new(SerialSink::open(path, profile)?))
        }
    }
}
