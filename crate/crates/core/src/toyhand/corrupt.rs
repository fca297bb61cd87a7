use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{DepthImage, BACKGROUND};
use crate::seed::mix;

/// Sensor-style degradation that turns a rendered view into a "real" one.
///
/// All lengths are in millimeters; they are converted to normalized units
/// with the depth range passed to [`corrupt`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionParams {
    noise_sigma_mm: f64,
    quantization_mm: f64,
    dropout: f64,
    erosion_radius: usize,
    seed: u64,
}

impl CorruptionParams {
    pub fn new(
        noise_sigma_mm: f64,
        quantization_mm: f64,
        dropout: f64,
        erosion_radius: usize,
        seed: u64,
    ) -> Result<Self> {
        for (name, v) in [("noise sigma", noise_sigma_mm), ("quantization step", quantization_mm), ("dropout", dropout)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if dropout > 0.5 {
            return Err(Error::InvalidArgument(format!("dropout probability must be <= 0.5, got {dropout}")));
        }
        Ok(CorruptionParams { noise_sigma_mm, quantization_mm, dropout, erosion_radius, seed })
    }

    pub fn none() -> Self {
        CorruptionParams { noise_sigma_mm: 0.0, quantization_mm: 0.0, dropout: 0.0, erosion_radius: 0, seed: 0 }
    }

    pub fn noise_sigma_mm(&self) -> f64 {
        self.noise_sigma_mm
    }

    pub fn quantization_mm(&self) -> f64 {
        self.quantization_mm
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn erosion_radius(&self) -> usize {
        self.erosion_radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_identity(&self) -> bool {
        self.noise_sigma_mm == 0.0 && self.quantization_mm == 0.0 && self.dropout == 0.0 && self.erosion_radius == 0
    }
}

/// Quantizes, adds Gaussian noise, drops pixels and erodes the silhouette of `img`.
///
/// Only foreground pixels are touched; erosion uses the input silhouette.
/// The output is deterministic in `(params, sample_seed)`.
pub fn corrupt(img: &DepthImage, params: &CorruptionParams, depth_range_mm: f64, sample_seed: u64) -> DepthImage {
    if params.is_identity() {
        return img.clone();
    }
    let n = img.size();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed, sample_seed));
    let step = (params.quantization_mm / depth_range_mm) as f32;
    let noise = Normal::new(0.0, params.noise_sigma_mm / depth_range_mm).expect("sigma validated");
    let mut out = img.clone();
    for row in 0..n {
        for col in 0..n {
            if !img.is_foreground(row, col) {
                continue;
            }
            let mut v = img.get(row, col);
            if step > 0.0 {
                v = (v / step).round() * step;
            }
            if params.noise_sigma_mm > 0.0 {
                v += noise.sample(&mut rng) as f32;
            }
            if params.dropout > 0.0 && rng.random_bool(params.dropout) {
                v = BACKGROUND;
            }
            out.set(row, col, v.clamp(-1.0, 1.0));
        }
    }
    let r = params.erosion_radius as isize;
    if r > 0 {
        for row in 0..n as isize {
            for col in 0..n as isize {
                if !img.is_foreground(row as usize, col as usize) {
                    continue;
                }
                let touches_bg = (-r..=r).any(|dy| {
                    (-r..=r).any(|dx| {
                        let (y, x) = (row + dy, col + dx);
                        y < 0 || x < 0 || y >= n as isize || x >= n as isize || !img.is_foreground(y as usize, x as usize)
                    })
                });
                if touches_bg {
                    out.set(row as usize, col as usize, BACKGROUND);
                }
            }
        }
    }
    out
}
