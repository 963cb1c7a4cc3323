//! Hooke's-law force estimates from pin displacement.
//!
//! Contact force compares a take recorded with the display attached to the
//! body against a detached take of the same pattern. Assuming the crafter
//! applied the same input both times, the missing displacement is what the
//! skin resisted: `k * max(0, x_detached - x_attached)`. Exports label these
//! columns approximate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DisplayProfile, Heights, PatternRecording, PinFrame, PIN_COUNT};
use crate::pattern::csv_number;

/// Shortest recording `align_recordings` accepts, in frames.
pub const MIN_ALIGN_FRAMES: usize = 10;
/// Lag search window either side of zero.
pub const MAX_LAG_MS: f64 = 2000.0;
/// Peak correlation below which an alignment is flagged low-confidence.
pub const LOW_CONFIDENCE_CORRELATION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForceError {
    #[error("recording too short: {frames} frames, need at least {min}")]
    TooShort { frames: usize, min: usize },
    #[error("profile mismatch: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceFrame {
    pub t_ms: f64,
    pub spring_force_n: Heights,
    /// Present only for attached/detached analysis.
    pub contact_force_n: Option<Heights>,
    /// Pins whose inferred contact force was negative and clamped to zero.
    pub clamped: [bool; PIN_COUNT],
}

/// `F = k * x` for every pin.
pub fn static_force(frame: &PinFrame, profile: &DisplayProfile) -> ForceFrame {
    let mut spring = [0.0; PIN_COUNT];
    for (f, h) in spring.iter_mut().zip(frame.heights_mm.iter()) {
        *f = profile.spring_n_per_mm * h;
    }
    ForceFrame {
        t_ms: frame.t_ms,
        spring_force_n: spring,
        contact_force_n: None,
        clamped: [false; PIN_COUNT],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Positive when `b` runs behind `a`.
    pub lag_frames: i64,
    pub lag_ms: f64,
    pub peak_correlation: f64,
    pub low_confidence: bool,
}

fn check_pair(a: &PatternRecording, b: &PatternRecording) -> Result<(), ForceError> {
    if a.frame_rate_hz != b.frame_rate_hz {
        return Err(ForceError::Profile(format!(
            "frame rates differ: {} vs {} Hz",
            a.frame_rate_hz, b.frame_rate_hz
        )));
    }
    if a.display_profile != b.display_profile {
        return Err(ForceError::Profile(format!(
            "display profiles differ: {} vs {}",
            a.display_profile.id, b.display_profile.id
        )));
    }
    Ok(())
}

/// Pearson correlation of `a[i]` against `b[i + lag]` over their overlap,
/// pooled across all pins.
fn correlation_at(a: &[Heights], b: &[Heights], lag: i64) -> f64 {
    let start = 0i64.max(-lag) as usize;
    let end = (a.len() as i64).min(b.len() as i64 - lag) as usize;
    let pairs = || (start..end).map(|i| (&a[i], &b[(i as i64 + lag) as usize]));
    let count = ((end - start) * PIN_COUNT) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for (x, y) in pairs() {
        sa += x.iter().sum::<f64>();
        sb += y.iter().sum::<f64>();
    }
    let (ma, mb) = (sa / count, sb / count);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in pairs() {
        for p in 0..PIN_COUNT {
            let (dx, dy) = (x[p] - ma, y[p] - mb);
            cov += dx * dy;
            va += dx * dx;
            vb += dy * dy;
        }
    }
    if va <= 1e-18 || vb <= 1e-18 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Lag that maximizes the normalized cross-correlation of the two takes,
/// searched over +/-2 s. Ties go to the smallest |lag|.
pub fn align_recordings(
    a: &PatternRecording,
    b: &PatternRecording,
) -> Result<Alignment, ForceError> {
    for r in [a, b] {
        if r.len() < MIN_ALIGN_FRAMES {
            return Err(ForceError::TooShort {
                frames: r.len(),
                min: MIN_ALIGN_FRAMES,
            });
        }
    }
    check_pair(a, b)?;
    let (na, nb) = (a.len() as i64, b.len() as i64);
    let min_overlap = (MIN_ALIGN_FRAMES as i64).max(na.min(nb) / 2);
    let max_lag = (MAX_LAG_MS / a.frame_period_ms()).round() as i64;

    let mut best = (0i64, f64::NEG_INFINITY);
    for step in 0..=2 * max_lag {
        let lag = if step % 2 == 1 {
            (step + 1) / 2
        } else {
            -(step / 2)
        };
        let overlap = na.min(nb - lag) - 0i64.max(-lag);
        if overlap < min_overlap {
            continue;
        }
        let r = correlation_at(&a.frames, &b.frames, lag);
        if r > best.1 + 1e-9 {
            best = (lag, r);
        }
    }
    let peak = best.1.max(0.0);
    Ok(Alignment {
        lag_frames: best.0,
        lag_ms: best.0 as f64 * a.frame_period_ms(),
        peak_correlation: peak,
        low_confidence: peak < LOW_CONFIDENCE_CORRELATION,
    })
}

/// Contact force for takes already aligned frame-for-frame. Output covers the
/// overlap; spring force is that of the attached take.
pub fn estimate_contact_force(
    detached: &PatternRecording,
    attached: &PatternRecording,
    profile: &DisplayProfile,
) -> Result<Vec<ForceFrame>, ForceError> {
    estimate_with_lag(detached, attached, profile, 0)
}

/// Align the takes first, then estimate over the aligned overlap.
pub fn estimate_contact_force_aligned(
    detached: &PatternRecording,
    attached: &PatternRecording,
    profile: &DisplayProfile,
) -> Result<(Alignment, Vec<ForceFrame>), ForceError> {
    check_profile(detached, attached, profile)?;
    let alignment = align_recordings(detached, attached)?;
    let frames = estimate_with_lag(detached, attached, profile, alignment.lag_frames)?;
    Ok((alignment, frames))
}

fn check_profile(
    detached: &PatternRecording,
    attached: &PatternRecording,
    profile: &DisplayProfile,
) -> Result<(), ForceError> {
    for (label, r) in [("detached", detached), ("attached", attached)] {
        if r.display_profile != *profile {
            return Err(ForceError::Profile(format!(
                "{label} take uses profile {}, expected {}",
                r.display_profile.id, profile.id
            )));
        }
    }
    Ok(())
}

fn estimate_with_lag(
    detached: &PatternRecording,
    attached: &PatternRecording,
    profile: &DisplayProfile,
    lag: i64,
) -> Result<Vec<ForceFrame>, ForceError> {
    check_profile(detached, attached, profile)?;
    check_pair(detached, attached)?;
    let start = 0i64.max(-lag) as usize;
    let end = (detached.len() as i64)
        .min(attached.len() as i64 - lag)
        .max(start as i64) as usize;
    let k = profile.spring_n_per_mm;
    Ok((start..end)
        .map(|i| {
            let x_det = &detached.frames[i];
            let x_att = &attached.frames[(i as i64 + lag) as usize];
            let mut out = static_force(&PinFrame::new(detached.frame_time_ms(i), *x_att), profile);
            let mut contact = [0.0; PIN_COUNT];
            for p in 0..PIN_COUNT {
                let gap = x_det[p] - x_att[p];
                if gap < 0.0 {
                    out.clamped[p] = true;
                }
                contact[p] = k * gap.max(0.0);
            }
            out.contact_force_n = Some(contact);
            out
        })
        .collect())
}

/// `t_ms,f0..f24`, plus `c0_approx..c24_approx` when contact forces are present.
pub fn force_csv(frames: &[ForceFrame]) -> String {
    let with_contact = frames.iter().any(|f| f.contact_force_n.is_some());
    let mut out = String::from("t_ms");
    for i in 0..PIN_COUNT {
        out.push_str(&format!(",f{i}"));
    }
    if with_contact {
        for i in 0..PIN_COUNT {
            out.push_str(&format!(",c{i}_approx"));
        }
    }
    out.push('\n');
    for f in frames {
        out.push_str(&csv_number(f.t_ms));
        for v in &f.spring_force_n {
            out.push(',');
            out.push_str(&csv_number(*v));
        }
        if with_contact {
            let contact = f.contact_force_n.unwrap_or([0.0; PIN_COUNT]);
            for v in &contact {
                out.push(',');
                out.push_str(&csv_number(*v));
            }
        }
        out.push('\n');
    }
    out
}
