use nalgebra::{Rotation3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::pose::Pose;

/// One rigid link of a finger, rotating about its finger's flexion axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub length: f64,
    /// Articulation angle relative to the previous segment (radians).
    pub angle: f64,
    pub limits: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finger {
    /// Knuckle position relative to the palm, in the hand frame (mm).
    pub attach: [f64; 3],
    /// Rest direction of the finger in the hand frame.
    pub direction: [f64; 3],
    /// Axis all of this finger's articulations rotate about.
    pub flex_axis: [f64; 3],
    pub segments: Vec<Segment>,
}

/// Articulated "toy hand": a palm with planar multi-segment fingers.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub fingers: Vec<Finger>,
    /// Palm base position (mm, world frame).
    pub base: [f64; 3],
    /// Global orientation as (roll, pitch, yaw), applied as `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub orientation: [f64; 3],
    /// Capsule radius of every finger segment (mm).
    pub radius: f64,
    /// Radius of the palm sphere (mm); zero renders no palm.
    pub palm_radius: f64,
}

/// A capsule (swept sphere) between two points, or a sphere when `a == b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl KinematicChain {
    /// `J = 1 + total segment count`.
    pub fn joint_count(&self) -> usize {
        1 + self.fingers.iter().map(|f| f.segments.len()).sum::<usize>()
    }

    pub fn global_rotation(&self) -> Rotation3<f64> {
        let [roll, pitch, yaw] = self.orientation;
        Rotation3::from_euler_angles(roll, pitch, yaw)
    }

    pub fn check_limits(&self) -> Result<()> {
        for (fi, f) in self.fingers.iter().enumerate() {
            for (si, s) in f.segments.iter().enumerate() {
                let (min, max) = s.limits;
                if !(s.angle >= min && s.angle <= max) {
                    return Err(Error::AngleOutOfRange { finger: fi, segment: si, angle: s.angle, min, max });
                }
            }
        }
        Ok(())
    }

    /// Knuckle positions and joint positions per finger (world frame).
    fn finger_points(&self) -> Vec<([f64; 3], Vec<[f64; 3]>)> {
        let r = self.global_rotation();
        let base = v3(self.base);
        self.fingers
            .iter()
            .map(|f| {
                let knuckle = base + r * v3(f.attach);
                let axis = Unit::new_normalize(v3(f.flex_axis));
                let dir = v3(f.direction).normalize();
                let mut p = knuckle;
                let mut phi = 0.0;
                let joints = f
                    .segments
                    .iter()
                    .map(|s| {
                        phi += s.angle;
                        p += r * (Rotation3::from_axis_angle(&axis, phi) * dir) * s.length;
                        arr(p)
                    })
                    .collect();
                (arr(knuckle), joints)
            })
            .collect()
    }

    /// Joint positions: the palm base first, then each finger's segment end points.
    pub fn forward_kinematics(&self) -> Result<Pose> {
        self.check_limits()?;
        let mut joints = vec![self.base];
        for (_, fj) in self.finger_points() {
            joints.extend(fj);
        }
        Ok(Pose::new(joints))
    }

    /// Solid primitives making up the hand surface, in the world frame.
    pub fn capsules(&self) -> Result<Vec<Capsule>> {
        self.check_limits()?;
        let mut out = Vec::new();
        if self.palm_radius > 0.0 {
            out.push(Capsule { a: self.base, b: self.base, radius: self.palm_radius });
        }
        if self.radius > 0.0 {
            for (knuckle, joints) in self.finger_points() {
                if knuckle != self.base {
                    out.push(Capsule { a: self.base, b: knuckle, radius: self.radius });
                }
                let mut prev = knuckle;
                for j in joints {
                    out.push(Capsule { a: prev, b: j, radius: self.radius });
                    prev = j;
                }
            }
        }
        Ok(out)
    }
}
