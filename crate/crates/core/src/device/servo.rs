use serde::{Deserialize, Serialize};

use crate::model::{DisplayProfile, PinFrame, PIN_COUNT};

use super::{DeviceError, DeviceFrame, PinSink};

/// Linear micro-servo limits. Only speed is simulated; the force figure is
/// carried for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoModel {
    pub max_speed_mm_s: f64,
    pub stroke_mm: f64,
    pub update_rate_hz: f64,
    pub peak_force_n: f64,
}

impl ServoModel {
    /// 9 mm in 0.108 s at 6.0 V, 50 Hz PWM, 16.43 N peak.
    pub fn linear_micro_servo(stroke_mm: f64) -> Self {
        Self {
            max_speed_mm_s: 9.0 / 0.108,
            stroke_mm,
            update_rate_hz: 50.0,
            peak_force_n: 16.43,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.max_speed_mm_s.is_finite() && self.max_speed_mm_s > 0.0) {
            return Err(DeviceError::Sink(format!(
                "max_speed_mm_s must be > 0, got {}",
                self.max_speed_mm_s
            )));
        }
        if !(self.update_rate_hz > 0.0 && self.stroke_mm > 0.0) {
            return Err(DeviceError::Sink(
                "servo rate and stroke must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A speed-limited 25-servo display. It only moves when commanded, so runs
/// are deterministic.
#[derive(Debug, Clone)]
pub struct SimulatedDisplay {
    servo: ServoModel,
    profile: DisplayProfile,
    position: [f64; PIN_COUNT],
    target: [f64; PIN_COUNT],
    clock_ms: f64,
    last_command_ms: Option<f64>,
    seq: u8,
    trace: Vec<PinFrame>,
}

impl SimulatedDisplay {
    pub fn new(profile: DisplayProfile) -> Self {
        Self::with_servo(profile, ServoModel::linear_micro_servo(profile.stroke_mm))
    }

    pub fn with_servo(profile: DisplayProfile, servo: ServoModel) -> Self {
        Self {
            servo,
            profile,
            position: [0.0; PIN_COUNT],
            target: [0.0; PIN_COUNT],
            clock_ms: 0.0,
            last_command_ms: None,
            seq: 0,
            trace: Vec::new(),
        }
    }

    pub fn servo(&self) -> &ServoModel {
        &self.servo
    }

    pub fn position(&self) -> &[f64; PIN_COUNT] {
        &self.position
    }

    /// Achieved positions, one sample per command.
    pub fn trace(&self) -> &[PinFrame] {
        &self.trace
    }

    pub fn clear_trace(&mut self) {
        self.trace.clear();
    }

    fn advance(&mut self, dt_ms: f64) {
        let max_step = self.servo.max_speed_mm_s * dt_ms / 1000.0;
        for (x, &target) in self.position.iter_mut().zip(self.target.iter()) {
            *x += (target - *x).clamp(-max_step, max_step);
        }
    }

    /// Apply `frame` as the target and move every pin toward it for `dt_ms`
    /// at no more than the servo's speed.
    pub fn sim_step(&mut self, frame: &DeviceFrame, dt_ms: f64) -> PinFrame {
        self.target = frame.heights_mm(&self.profile);
        if dt_ms > 0.0 {
            self.advance(dt_ms);
            self.clock_ms += dt_ms;
        }
        let achieved = PinFrame::new(self.clock_ms, self.position);
        self.trace.push(achieved);
        achieved
    }
}

/// `sim_step` as a free function.
pub fn sim_step(display: &mut SimulatedDisplay, frame: &DeviceFrame, dt_ms: f64) -> PinFrame {
    display.sim_step(frame, dt_ms)
}

impl PinSink for SimulatedDisplay {
    /// Quantizes like real hardware, then integrates over the time since the
    /// previous command. The first command is held for one PWM period.
    fn send(&mut self, frame: &PinFrame) -> Result<(), DeviceError> {
        let device = DeviceFrame::from_pin_frame(frame, &self.profile, self.seq)?;
        self.seq = self.seq.wrapping_add(1);
        let dt_ms = match self.last_command_ms {
            Some(prev) => frame.t_ms - prev,
            None => 1000.0 / self.servo.update_rate_hz,
        };
        self.last_command_ms = Some(frame.t_ms);
        self.sim_step(&device, dt_ms.max(0.0));
        if let Some(last) = self.trace.last_mut() {
            last.t_ms = frame.t_ms;
        }
        self.clock_ms = frame.t_ms;
        Ok(())
    }

    fn trace(&self) -> Option<&[PinFrame]> {
        Some(&self.trace)
    }

    fn describe(&self) -> String {
        "simulated-display".into()
    }
}
