use nalgebra::{Rotation3, Vector3};

use super::chain::{Capsule, KinematicChain};
use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::pose::Pose;

/// An orthographic camera: world-to-camera rigid transform plus crop scale.
///
/// The camera looks down its +z axis; image columns follow camera x and
/// rows follow camera y.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub index: usize,
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub mm_per_pixel: f64,
    /// Depth distance (mm) from the crop center that maps to +-1.
    pub depth_range_mm: f64,
}

impl CameraView {
    /// A camera orbiting the world origin about the y axis by `angle` radians,
    /// placed `distance` mm away.
    pub fn orbit(index: usize, angle: f64, distance: f64, mm_per_pixel: f64, depth_range_mm: f64) -> Self {
        CameraView {
            index,
            rotation: Rotation3::from_axis_angle(&Vector3::y_axis(), angle),
            translation: Vector3::new(0.0, 0.0, distance),
            mm_per_pixel,
            depth_range_mm,
        }
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let c = self.rotation * Vector3::new(p[0], p[1], p[2]) + self.translation;
        [c.x, c.y, c.z]
    }

    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let w = self.rotation.inverse() * (Vector3::new(p[0], p[1], p[2]) - self.translation);
        [w.x, w.y, w.z]
    }

    pub fn pose_to_camera(&self, pose: &Pose) -> Pose {
        Pose::new(pose.joints().iter().map(|&j| self.to_camera(j)).collect())
    }
}

/// Raw depth in millimeters over a square pixel grid; background is `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDepth {
    pub size: usize,
    pub mm_per_pixel: f64,
    /// Camera-frame (x, y) of the grid center.
    pub center: [f64; 2],
    pub data: Vec<f64>,
}

impl RawDepth {
    /// Camera-frame (x, y) of the center of pixel (row, col).
    pub fn pixel_xy(&self, row: usize, col: usize) -> [f64; 2] {
        let half = self.size as f64 / 2.0;
        [
            self.center[0] + (col as f64 + 0.5 - half) * self.mm_per_pixel,
            self.center[1] + (row as f64 + 0.5 - half) * self.mm_per_pixel,
        ]
    }
}

fn ray_sphere(o: Vector3<f64>, c: Vector3<f64>, r: f64) -> Option<f64> {
    // ray direction is +z
    let oc = o - c;
    let b = oc.z;
    let h = b * b - (oc.dot(&oc) - r * r);
    (h >= 0.0).then(|| -b - h.sqrt())
}

/// First hit along +z from `o` with a capsule, as ray parameter.
fn ray_capsule(o: Vector3<f64>, cap: &Capsule) -> Option<f64> {
    let pa = Vector3::new(cap.a[0], cap.a[1], cap.a[2]);
    let pb = Vector3::new(cap.b[0], cap.b[1], cap.b[2]);
    let r = cap.radius;
    let ba = pb - pa;
    let oa = o - pa;
    let baba = ba.dot(&ba);
    let mut best = f64::INFINITY;
    if baba > 0.0 {
        let bard = ba.z;
        let baoa = ba.dot(&oa);
        let rdoa = oa.z;
        let oaoa = oa.dot(&oa);
        let a = baba - bard * bard;
        let b = baba * rdoa - baoa * bard;
        let c = baba * oaoa - baoa * baoa - r * r * baba;
        let h = b * b - a * c;
        if a > 1e-12 * baba && h >= 0.0 {
            let t = (-b - h.sqrt()) / a;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                best = t;
            }
        }
    }
    for end in [pa, pb] {
        if let Some(t) = ray_sphere(o, end, r) {
            best = best.min(t);
        }
    }
    best.is_finite().then_some(best)
}

/// Nearest-surface depth of `capsules` (camera frame) over an orthographic grid.
pub fn rasterize(capsules: &[Capsule], size: usize, mm_per_pixel: f64, center: [f64; 2]) -> RawDepth {
    let near = capsules
        .iter()
        .map(|c| c.a[2].min(c.b[2]) - c.radius)
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    let mut raw = RawDepth { size, mm_per_pixel, center, data: vec![f64::INFINITY; size * size] };
    for row in 0..size {
        for col in 0..size {
            let [x, y] = raw.pixel_xy(row, col);
            let o = Vector3::new(x, y, near);
            let mut depth = f64::INFINITY;
            for cap in capsules {
                // cheap reject on the (x, y) bounding box
                let (lo_x, hi_x) = (cap.a[0].min(cap.b[0]) - cap.radius, cap.a[0].max(cap.b[0]) + cap.radius);
                let (lo_y, hi_y) = (cap.a[1].min(cap.b[1]) - cap.radius, cap.a[1].max(cap.b[1]) + cap.radius);
                if x < lo_x || x > hi_x || y < lo_y || y > hi_y {
                    continue;
                }
                if let Some(t) = ray_capsule(o, cap) {
                    depth = depth.min(near + t);
                }
            }
            raw.data[row * size + col] = depth;
        }
    }
    raw
}

/// Affine depth normalization relative to a crop-center depth; background maps to +1.
pub fn normalize_depth(d: f64, center_depth: f64, range_mm: f64) -> f32 {
    if !d.is_finite() {
        return 1.0;
    }
    ((d - center_depth) / range_mm).clamp(-1.0, 1.0) as f32
}

pub fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < 16 || !resolution.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "resolution must be a power of two >= 16, got {resolution}"
        )));
    }
    Ok(())
}

/// A rendered, normalized view together with its crop center.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: DepthImage,
    /// Camera-frame crop center: joint centroid (x, y, depth).
    pub hand_location: [f64; 3],
}

/// Renders the chain from `view` into a normalized crop centered on the joint centroid.
pub fn render_view(chain: &KinematicChain, view: &CameraView, resolution: usize) -> Result<RenderedView> {
    check_resolution(resolution)?;
    let pose = view.pose_to_camera(&chain.forward_kinematics()?);
    let center = pose.centroid();
    let caps: Vec<Capsule> = chain
        .capsules()?
        .into_iter()
        .map(|c| Capsule { a: view.to_camera(c.a), b: view.to_camera(c.b), radius: c.radius })
        .collect();
    let half = resolution as f64 * view.mm_per_pixel / 2.0;
    for c in &caps {
        for p in [c.a, c.b] {
            let dx = (p[0] - center[0]).abs() + c.radius;
            let dy = (p[1] - center[1]).abs() + c.radius;
            if dx > half || dy > half {
                return Err(Error::OutsideFootprint {
                    view: view.index,
                    detail: format!("point ({:.1}, {:.1}) mm vs half-width {half:.1} mm", p[0], p[1]),
                });
            }
        }
    }
    let raw = rasterize(&caps, resolution, view.mm_per_pixel, [center[0], center[1]]);
    let data = raw.data.iter().map(|&d| normalize_depth(d, center[2], view.depth_range_mm)).collect();
    Ok(RenderedView { image: DepthImage::new(resolution, data), hand_location: center })
}

/// Normalized depth image of `chain` seen from `view`.
pub fn render_depth(chain: &KinematicChain, view: &CameraView, resolution: usize) -> Result<DepthImage> {
    render_view(chain, view, resolution).map(|r| r.image)
}
