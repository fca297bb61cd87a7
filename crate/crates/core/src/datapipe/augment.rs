use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{DepthImage, BACKGROUND};
use crate::pose::Pose;

/// Ranges for online augmentation, resampled on every load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotation is uniform on `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    /// Standard deviation of the crop-center offset, per axis (mm).
    pub offset_sigma_mm: f64,
    /// Standard deviation of the per-pixel depth white noise (mm).
    pub noise_sigma_mm: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { enabled: true, max_rotation_deg: 60.0, offset_sigma_mm: 5.0, noise_sigma_mm: 5.0 }
    }
}

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// In-plane rotation (radians).
    pub rotation: f64,
    /// Crop-center offset (mm).
    pub offset_mm: [f64; 2],
    pub noise_sigma_mm: f64,
    pub noise_seed: u64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams { rotation: 0.0, offset_mm: [0.0; 2], noise_sigma_mm: 0.0, noise_seed: 0 }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == 0.0 && self.offset_mm == [0.0; 2] && self.noise_sigma_mm == 0.0
    }

    pub fn draw<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        if !cfg.enabled {
            return Self::identity();
        }
        let max = cfg.max_rotation_deg.to_radians();
        let rotation = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
        let offset = Normal::new(0.0, cfg.offset_sigma_mm).expect("finite sigma");
        let offset_mm = [offset.sample(rng), offset.sample(rng)];
        AugmentParams { rotation, offset_mm, noise_sigma_mm: cfg.noise_sigma_mm, noise_seed: rng.random() }
    }

    /// The same geometry with a different noise stream.
    pub fn with_noise_seed(self, noise_seed: u64) -> Self {
        AugmentParams { noise_seed, ..self }
    }
}

/// Metric scale of a normalized crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropScale {
    pub mm_per_pixel: f64,
    pub depth_range_mm: f64,
}

fn sample(img: &DepthImage, col_f: f64, row_f: f64) -> f32 {
    let n = img.size() as isize;
    let (c0, r0) = (col_f.floor() as isize, row_f.floor() as isize);
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < n && c < n;
    let taps = [(r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)];
    let all_fg = taps.iter().all(|&(r, c)| inside(r, c) && img.is_foreground(r as usize, c as usize));
    if all_fg {
        let (fx, fy) = ((col_f - c0 as f64) as f32, (row_f - r0 as f64) as f32);
        let v = |r: isize, c: isize| img.get(r as usize, c as usize);
        let top = v(r0, c0) * (1.0 - fx) + v(r0, c0 + 1) * fx;
        let bot = v(r0 + 1, c0) * (1.0 - fx) + v(r0 + 1, c0 + 1) * fx;
        return top * (1.0 - fy) + bot * fy;
    }
    // near the silhouette: nearest neighbor, so foreground never blends with background
    let (r, c) = (row_f.round() as isize, col_f.round() as isize);
    if inside(r, c) {
        img.get(r as usize, c as usize)
    } else {
        BACKGROUND
    }
}

/// Rotates, shifts and noises a normalized crop.
///
/// Output pixel at crop position `p` (mm from center) samples the input at
/// `R(-rotation) p + offset`.
pub fn augment_image(img: &DepthImage, params: &AugmentParams, scale: &CropScale) -> DepthImage {
    if params.is_identity() {
        return img.clone();
    }
    let n = img.size();
    let half = n as f64 / 2.0;
    let (s, c) = params.rotation.sin_cos();
    let mut out = DepthImage::background(n);
    for row in 0..n {
        for col in 0..n {
            let x = (col as f64 + 0.5 - half) * scale.mm_per_pixel;
            let y = (row as f64 + 0.5 - half) * scale.mm_per_pixel;
            let qx = c * x + s * y + params.offset_mm[0];
            let qy = -s * x + c * y + params.offset_mm[1];
            let v = sample(img, qx / scale.mm_per_pixel + half - 0.5, qy / scale.mm_per_pixel + half - 0.5);
            out.set(row, col, v);
        }
    }
    if params.noise_sigma_mm > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
        let noise = Normal::new(0.0, params.noise_sigma_mm / scale.depth_range_mm).expect("finite sigma");
        for v in out.data_mut() {
            if *v < BACKGROUND {
                *v = (*v + noise.sample(&mut rng) as f32).clamp(-1.0, 1.0);
            }
        }
    }
    out
}

/// The pose label transformed to match [`augment_image`] with the same params.
pub fn augment_pose(pose: &Pose, params: &AugmentParams) -> Pose {
    let (s, c) = params.rotation.sin_cos();
    let [ox, oy] = params.offset_mm;
    Pose::new(
        pose.joints()
            .iter()
            .map(|&[x, y, z]| {
                let (dx, dy) = (x - ox, y - oy);
                [c * dx - s * dy, s * dx + c * dy, z]
            })
            .collect(),
    )
}

/// Applies one parameter draw to an input view and, when readable, its label.
pub fn augment(
    input: &DepthImage,
    label: Option<&Pose>,
    params: &AugmentParams,
    scale: &CropScale,
) -> (DepthImage, Option<Pose>) {
    (augment_image(input, params, scale), label.map(|p| augment_pose(p, params)))
}
