/// Background value of a normalized depth image.
pub const BACKGROUND: f32 = 1.0;

/// Square grid of normalized depth values in `[-1, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    size: usize,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(size: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), size * size, "depth image must be {size}x{size}");
        DepthImage { size, data }
    }

    pub fn filled(size: usize, value: f32) -> Self {
        DepthImage { size, data: vec![value; size * size] }
    }

    pub fn background(size: usize) -> Self {
        Self::filled(size, BACKGROUND)
    }

    /// Side length in pixels.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.size + col] = v;
    }

    pub fn is_foreground(&self, row: usize, col: usize) -> bool {
        self.get(row, col) < BACKGROUND
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v < BACKGROUND).count()
    }

    /// Mean absolute difference to `other`.
    pub fn mean_abs_diff(&self, other: &DepthImage) -> f64 {
        assert_eq!(self.size, other.size);
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum();
        s / self.data.len() as f64
    }
}
