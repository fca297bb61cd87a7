/// `J` joint positions in 3-D millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    joints: Vec<[f64; 3]>,
}

impl Pose {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        Pose { joints }
    }

    /// Builds a pose from a flat `[x0, y0, z0, x1, ...]` vector of length `3J`.
    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len() % 3, 0, "flat pose length must be a multiple of 3");
        Pose { joints: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() }
    }

    pub fn joints(&self) -> &[[f64; 3]] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.joints.len().max(1) as f64;
        let mut c = [0.0; 3];
        for j in &self.joints {
            for k in 0..3 {
                c[k] += j[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn translated(&self, by: [f64; 3]) -> Pose {
        Pose { joints: self.joints.iter().map(|j| [j[0] + by[0], j[1] + by[1], j[2] + by[2]]).collect() }
    }

    pub fn scaled(&self, s: f64) -> Pose {
        Pose { joints: self.joints.iter().map(|j| j.map(|v| v * s)).collect() }
    }

    /// The pose shifted so its centroid is at the origin.
    pub fn centered(&self) -> Pose {
        let c = self.centroid();
        self.translated([-c[0], -c[1], -c[2]])
    }

    /// Euclidean distance of each joint to the matching joint of `other`.
    pub fn joint_distances(&self, other: &Pose) -> Vec<f64> {
        assert_eq!(self.joints.len(), other.joints.len(), "joint count mismatch");
        self.joints
            .iter()
            .zip(&other.joints)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
            .collect()
    }

    pub fn mean_joint_distance(&self, other: &Pose) -> f64 {
        let d = self.joint_distances(other);
        d.iter().sum::<f64>() / d.len() as f64
    }
}
