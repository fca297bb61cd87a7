use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::chain::{Finger, KinematicChain, Segment};
use super::corrupt::{corrupt, CorruptionParams};
use super::render::{check_resolution, render_view, CameraView};
use crate::datapipe::{Dataset, DatasetHeader, DomainFlags, Record, Split, CONTAINER_VERSION};
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::seed::derive;

/// Distribution the toy hand's articulation and placement are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct HandSampler {
    pub fingers: usize,
    pub segments_per_finger: usize,
    /// Length of segment `k` of every finger (mm); the last entry repeats.
    pub segment_lengths: Vec<f64>,
    pub segment_radius: f64,
    pub palm_radius: f64,
    /// Distance from palm center to each knuckle (mm).
    pub knuckle_offset: f64,
    /// Angle between neighboring finger directions (radians).
    pub finger_spread: f64,
    /// Per-segment flexion limits (radians).
    pub flex_limits: (f64, f64),
    /// Half-widths of the uniform roll / pitch / yaw ranges (radians).
    pub orientation_range: [f64; 3],
    /// Half-width of the uniform palm position jitter (mm).
    pub base_jitter_mm: f64,
}

impl Default for HandSampler {
    fn default() -> Self {
        HandSampler {
            fingers: 3,
            segments_per_finger: 2,
            segment_lengths: vec![28.0, 22.0],
            segment_radius: 7.0,
            palm_radius: 14.0,
            knuckle_offset: 12.0,
            finger_spread: 35f64.to_radians(),
            flex_limits: (-0.2, 1.4),
            orientation_range: [0.6, 0.6, 0.6],
            base_jitter_mm: 5.0,
        }
    }
}

impl HandSampler {
    pub fn joint_count(&self) -> usize {
        1 + self.fingers * self.segments_per_finger
    }

    pub fn validate(&self) -> Result<()> {
        if self.fingers == 0 || self.segments_per_finger == 0 || self.segment_lengths.is_empty() {
            return Err(Error::Config("hand needs at least one finger with one segment".into()));
        }
        if !(self.flex_limits.0 <= self.flex_limits.1) {
            return Err(Error::Config(format!("flex limits {:?} are inverted", self.flex_limits)));
        }
        Ok(())
    }

    /// Draws a chain with every angle uniform within its limits.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> KinematicChain {
        let (lo, hi) = self.flex_limits;
        let fingers = (0..self.fingers)
            .map(|f| {
                let yaw = (f as f64 - (self.fingers as f64 - 1.0) / 2.0) * self.finger_spread;
                let dir = [yaw.cos(), yaw.sin(), 0.0];
                Finger {
                    attach: dir.map(|d| d * self.knuckle_offset),
                    direction: dir,
                    // curl toward -z
                    flex_axis: [-dir[1], dir[0], 0.0],
                    segments: (0..self.segments_per_finger)
                        .map(|s| Segment {
                            length: self.segment_lengths[s.min(self.segment_lengths.len() - 1)],
                            angle: if lo < hi { rng.random_range(lo..=hi) } else { lo },
                            limits: self.flex_limits,
                        })
                        .collect(),
                }
            })
            .collect();
        let mut orientation = [0.0; 3];
        for (o, &r) in orientation.iter_mut().zip(&self.orientation_range) {
            *o = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        }
        let j = self.base_jitter_mm;
        let base = if j > 0.0 { [0.0; 3].map(|_: f64| rng.random_range(-j..=j)) } else { [0.0; 3] };
        KinematicChain {
            fingers,
            base,
            orientation,
            radius: self.segment_radius,
            palm_radius: self.palm_radius,
        }
    }
}

/// Everything needed to synthesize a two-domain dataset.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub count: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    /// Fraction of test ids flagged as the validation subset.
    pub validation_fraction: f64,
    pub hand: HandSampler,
    pub corruption: CorruptionParams,
    pub views: Vec<CameraView>,
    pub resolution: usize,
    pub seed: u64,
}

impl GenConfig {
    /// Desk-scale defaults: 32x32 crops, two views 60 degrees apart.
    pub fn desk(count: usize, seed: u64) -> Self {
        GenConfig {
            count,
            train_fraction: 0.8,
            test_fraction: 0.2,
            validation_fraction: 0.25,
            hand: HandSampler::default(),
            corruption: CorruptionParams::new(6.0, 4.0, 0.04, 1, seed).expect("valid defaults"),
            views: default_views(4.5, 80.0),
            resolution: 32,
            seed,
        }
    }

    pub fn train_count(&self) -> usize {
        (self.count as f64 * self.train_fraction).round() as usize
    }
}

pub fn default_views(mm_per_pixel: f64, depth_range_mm: f64) -> Vec<CameraView> {
    vec![
        CameraView::orbit(0, 0.0, 400.0, mm_per_pixel, depth_range_mm),
        CameraView::orbit(1, PI / 3.0, 400.0, mm_per_pixel, depth_range_mm),
    ]
}

const MAX_ATTEMPTS: u64 = 1000;

struct Generated {
    pose: Pose,
    synthetic: Vec<crate::image::DepthImage>,
    real: Vec<crate::image::DepthImage>,
}

fn generate_one(cfg: &GenConfig, id: u64) -> Result<Generated> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, "pose", id | (attempt << 40)));
        let chain = cfg.hand.sample(&mut rng);
        let rendered: Result<Vec<_>> = cfg.views.iter().map(|v| render_view(&chain, v, cfg.resolution)).collect();
        let rendered = match rendered {
            Ok(r) => r,
            Err(Error::OutsideFootprint { .. }) => continue,
            Err(e) => return Err(e),
        };
        let view0 = &cfg.views[0];
        let center = rendered[0].hand_location;
        let pose = view0
            .pose_to_camera(&chain.forward_kinematics()?)
            .translated([-center[0], -center[1], -center[2]]);
        // stored as f32; round here so memory and file agree bit-for-bit
        let pose = Pose::from_flat(&pose.flat().iter().map(|&v| v as f32 as f64).collect::<Vec<_>>());
        let real = rendered
            .iter()
            .enumerate()
            .map(|(v, r)| {
                let range = cfg.views[v].depth_range_mm;
                corrupt(&r.image, &cfg.corruption, range, derive(cfg.seed, "real", id * 16 + v as u64))
            })
            .collect();
        let synthetic = rendered.into_iter().map(|r| r.image).collect();
        return Ok(Generated { pose, synthetic, real });
    }
    Err(Error::Config(format!(
        "could not place sample {id} inside the camera footprint after {MAX_ATTEMPTS} draws"
    )))
}

/// Renders `count` corresponding synthetic/real samples.
///
/// Ids `0..train_count` form the training split, the rest the test split.
/// Training ids get a seeded labeled-order rank, so the labeled subset of size
/// `n` is always the ids with rank `< n`.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    if cfg.count < 10 {
        return Err(Error::Config(format!("dataset count must be >= 10, got {}", cfg.count)));
    }
    let fractions = [cfg.train_fraction, cfg.test_fraction];
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {} + {} must be in [0, 1] and sum to 1",
            cfg.train_fraction, cfg.test_fraction
        )));
    }
    if !(0.0..=1.0).contains(&cfg.validation_fraction) {
        return Err(Error::Config("validation fraction must be in [0, 1]".into()));
    }
    if cfg.views.len() < 2 {
        return Err(Error::Config("at least two camera views are required".into()));
    }
    check_resolution(cfg.resolution)?;
    cfg.hand.validate()?;
    if cfg.count > u32::MAX as usize {
        return Err(Error::Config("dataset count exceeds the container's u32 range".into()));
    }

    let generated: Vec<Generated> =
        (0..cfg.count as u64).into_par_iter().map(|id| generate_one(cfg, id)).collect::<Result<_>>()?;

    let n_train = cfg.train_count();
    let mut order: Vec<usize> = (0..n_train).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, "labeled", 0)));
    let mut rank = vec![u32::MAX; cfg.count];
    for (r, &id) in order.iter().enumerate() {
        rank[id] = r as u32;
    }
    let mut test_ids: Vec<usize> = (n_train..cfg.count).collect();
    test_ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, "validation", 0)));
    let n_val = (test_ids.len() as f64 * cfg.validation_fraction).round() as usize;
    let mut split: Vec<Split> = (0..cfg.count).map(|id| if id < n_train { Split::Train } else { Split::Test }).collect();
    for &id in &test_ids[..n_val] {
        split[id] = Split::Validation;
    }

    let header = DatasetHeader {
        version: CONTAINER_VERSION,
        count: cfg.count as u32,
        resolution: cfg.resolution as u32,
        joints: cfg.hand.joint_count() as u32,
        views: cfg.views.len() as u32,
        domains: DomainFlags::BOTH,
        seed: cfg.seed,
        mm_per_pixel: cfg.views[0].mm_per_pixel as f32,
        depth_range_mm: cfg.views[0].depth_range_mm as f32,
    };
    let records = generated
        .into_iter()
        .enumerate()
        .map(|(id, g)| Record::new(id as u32, split[id], rank[id], g.pose, g.synthetic, g.real))
        .collect();
    Dataset::new(header, records)
}
