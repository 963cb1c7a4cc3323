//! Software side of a cable-driven 5x5 pin shape display kit.
//!
//! Camera frames of the cable window are tracked into pin heights
//! ([`tracker`]), recorded into pattern files ([`pattern`]), tuned and replayed
//! ([`playback`]) into a serial-attached or simulated servo display
//! ([`device`]). [`force`] turns displacement into Hooke's-law force
//! estimates, and [`synth`] renders ground-truth camera frames for closed-loop
//! testing.

pub mod device;
pub mod force;
pub mod image;
pub mod model;
pub mod pattern;
pub mod playback;
#[cfg(feature = "service")]
pub mod service;
pub mod synth;
pub mod tracker;
pub mod workflow;

pub use model::{
    clamp_height, linear_index, DisplayProfile, GridIndex, PatternRecording, PinFrame, ProfileId,
    TuningParams, GRID_SIZE, PIN_COUNT,
};
