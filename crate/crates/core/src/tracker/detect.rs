use crate::image::GreyImage;
use crate::model::PIN_COUNT;

use super::{ThresholdMode, TrackerConfig, TrackerError};

/// Pixels added around a blob's bounding box when weighting its centroid, so
/// partially covered edge pixels above the threshold still contribute.
const CENTROID_MARGIN_PX: u32 = 2;

/// Outcome of marker detection for one lane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneDetection {
    /// Darkness-weighted centre `(x, y)` in pixel coordinates, where pixel
    /// `(i, j)` covers `[i, i+1) x [j, j+1)`.
    pub centroid: Option<(f64, f64)>,
    pub area_px: usize,
    /// More than one blob passed the area filter.
    pub ambiguous: bool,
}

/// One centroid per lane.
#[derive(Debug, Clone, PartialEq)]
pub struct Markers {
    pub centroids: [(f64, f64); PIN_COUNT],
    pub ambiguous_lanes: Vec<usize>,
}

/// Otsu's threshold: the level `t` maximising between-class variance for the
/// split `<= t` / `> t`. `None` when the histogram holds a single level.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &n)| v as f64 * n as f64)
        .sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let mut best: Option<(u8, f64)> = None;
    for (t, &count) in hist.iter().enumerate().take(255) {
        w0 += count;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

struct Blob {
    area: usize,
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

/// Per-lane detection; lanes without a valid blob have `centroid: None`.
pub fn detect_lanes(
    image: &GreyImage,
    config: &TrackerConfig,
) -> Result<[LaneDetection; PIN_COUNT], TrackerError> {
    config.check_dims(image)?;
    let width = image.width() as usize;
    let height = image.height() as usize;
    let data = image.as_bytes();

    // Pixels strictly below `cut` are dark.
    let cut: u16 = match config.threshold {
        ThresholdMode::Fixed(level) => level as u16,
        ThresholdMode::Otsu => {
            let mut hist = [0u64; 256];
            for &v in data {
                hist[v as usize] += 1;
            }
            match otsu_threshold(&hist) {
                Some(t) => t as u16 + 1,
                None => 0,
            }
        }
    };

    let mut lane_of = vec![u8::MAX; width];
    for (lane, &(x0, x1)) in config.lanes.iter().enumerate() {
        for slot in &mut lane_of[x0 as usize..x1 as usize] {
            *slot = lane as u8;
        }
    }

    let mut visited = vec![false; data.len()];
    let mut blobs: Vec<Vec<Blob>> = (0..PIN_COUNT).map(|_| Vec::new()).collect();
    let mut stack: Vec<(u32, u32)> = Vec::new();
    let (mut bright_sum, mut bright_n) = (0u64, 0u64);

    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for (x, &v) in row.iter().enumerate() {
            if (v as u16) >= cut {
                bright_sum += v as u64;
                bright_n += 1;
                continue;
            }
            let idx = y * width + x;
            let lane = lane_of[x];
            if visited[idx] || lane == u8::MAX {
                continue;
            }
            let (lx0, lx1) = config.lanes[lane as usize];
            let mut blob = Blob {
                area: 0,
                x0: x as u32,
                x1: x as u32,
                y0: y as u32,
                y1: y as u32,
            };
            visited[idx] = true;
            stack.push((x as u32, y as u32));
            while let Some((px, py)) = stack.pop() {
                blob.area += 1;
                blob.x0 = blob.x0.min(px);
                blob.x1 = blob.x1.max(px);
                blob.y0 = blob.y0.min(py);
                blob.y1 = blob.y1.max(py);
                let nx0 = px.saturating_sub(1).max(lx0);
                let nx1 = (px + 1).min(lx1 - 1);
                let ny0 = py.saturating_sub(1);
                let ny1 = (py + 1).min(height as u32 - 1);
                for ny in ny0..=ny1 {
                    for nx in nx0..=nx1 {
                        let n = ny as usize * width + nx as usize;
                        if !visited[n] && (data[n] as u16) < cut {
                            visited[n] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            blobs[lane as usize].push(blob);
        }
    }

    let background = if bright_n > 0 {
        bright_sum as f64 / bright_n as f64
    } else {
        255.0
    };

    let mut out = [LaneDetection::default(); PIN_COUNT];
    for (lane, lane_blobs) in blobs.iter().enumerate() {
        let valid: Vec<&Blob> = lane_blobs
            .iter()
            .filter(|b| b.area >= config.min_blob_area_px && b.area <= config.max_blob_area_px)
            .collect();
        let Some(best) = valid.iter().max_by_key(|b| b.area) else {
            continue;
        };
        let (lx0, lx1) = config.lanes[lane];
        let cx0 = best.x0.saturating_sub(CENTROID_MARGIN_PX).max(lx0);
        let cx1 = (best.x1 + CENTROID_MARGIN_PX).min(lx1 - 1);
        let cy0 = best.y0.saturating_sub(CENTROID_MARGIN_PX);
        let cy1 = (best.y1 + CENTROID_MARGIN_PX).min(height as u32 - 1);
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for y in cy0..=cy1 {
            let row = image.row(y);
            for x in cx0..=cx1 {
                let w = background - row[x as usize] as f64;
                if w > 0.0 {
                    sw += w;
                    sx += w * (x as f64 + 0.5);
                    sy += w * (y as f64 + 0.5);
                }
            }
        }
        if sw > 0.0 {
            out[lane] = LaneDetection {
                centroid: Some((sx / sw, sy / sw)),
                area_px: best.area,
                ambiguous: valid.len() > 1,
            };
        }
    }
    Ok(out)
}

/// Exactly one centroid per lane, or the first lane without a marker.
pub fn detect_markers(image: &GreyImage, config: &TrackerConfig) -> Result<Markers, TrackerError> {
    let lanes = detect_lanes(image, config)?;
    let mut centroids = [(0.0, 0.0); PIN_COUNT];
    let mut ambiguous_lanes = Vec::new();
    for (lane, det) in lanes.iter().enumerate() {
        centroids[lane] = det.centroid.ok_or(TrackerError::LaneMissing(lane))?;
        if det.ambiguous {
            ambiguous_lanes.push(lane);
        }
    }
    Ok(Markers {
        centroids,
        ambiguous_lanes,
    })
}
