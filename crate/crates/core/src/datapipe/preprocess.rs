use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::toyhand::{normalize_depth, RawDepth};

/// Crop geometry applied to raw depth frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    /// Output side length in pixels.
    pub resolution: usize,
    /// Side length of the square crop (mm).
    pub crop_mm: f64,
    /// Depth offset from the crop center that maps to +-1 (mm).
    pub depth_range_mm: f64,
}

/// Crops a square region around `hand_location` (camera x, y and depth, mm),
/// resamples it to `spec.resolution` with nearest-neighbor lookup and maps depth
/// affinely to `[-1, 1]` around the hand depth.
pub fn preprocess(raw: &RawDepth, hand_location: [f64; 3], spec: &CropSpec) -> Result<DepthImage> {
    let half_frame = raw.size as f64 * raw.mm_per_pixel / 2.0;
    let (hx, hy) = (hand_location[0] - raw.center[0], hand_location[1] - raw.center[1]);
    if hx.abs() > half_frame || hy.abs() > half_frame {
        return Err(Error::HandOutsideFrame(hand_location[0], hand_location[1]));
    }
    let n = spec.resolution;
    let step = spec.crop_mm / n as f64;
    let mut out = DepthImage::background(n);
    for row in 0..n {
        for col in 0..n {
            let x = hx + (col as f64 + 0.5 - n as f64 / 2.0) * step;
            let y = hy + (row as f64 + 0.5 - n as f64 / 2.0) * step;
            let src_col = ((x + half_frame) / raw.mm_per_pixel).floor();
            let src_row = ((y + half_frame) / raw.mm_per_pixel).floor();
            if src_col < 0.0 || src_row < 0.0 || src_col >= raw.size as f64 || src_row >= raw.size as f64 {
                continue;
            }
            let d = raw.data[src_row as usize * raw.size + src_col as usize];
            out.set(row, col, normalize_depth(d, hand_location[2], spec.depth_range_mm));
        }
    }
    if out.foreground_count() == 0 {
        return Err(Error::EmptyCrop);
    }
    Ok(out)
}
