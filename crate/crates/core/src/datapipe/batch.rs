use rand::Rng;

use super::augment::{augment, AugmentConfig, AugmentParams, CropScale};
use super::container::{Dataset, Record};
use super::guard::LabelGuard;
use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::pose::Pose;

pub const INPUT_VIEW: usize = 0;
pub const TARGET_VIEW: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Synthetic,
    Real,
}

/// One loaded sample: augmented input view, its second view as view-prediction
/// target, and the (augmented) pose when the label is readable.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub id: u32,
    pub domain: Domain,
    pub input: DepthImage,
    pub target: DepthImage,
    /// Millimeters, view-0 camera frame, relative to the crop center.
    pub pose: Option<Pose>,
}

impl BatchItem {
    pub fn is_labeled(&self) -> bool {
        self.pose.is_some()
    }
}

/// The four independently drawn sets of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchComposition {
    /// Labeled real samples with their exactly corresponding synthetic render,
    /// as `(synthetic, real)`.
    pub corresponding: Vec<(BatchItem, BatchItem)>,
    pub real: Vec<BatchItem>,
    pub synthetic: Vec<BatchItem>,
    pub unlabeled: Vec<BatchItem>,
}

impl BatchComposition {
    pub fn set_sizes(&self) -> [usize; 4] {
        [self.corresponding.len(), self.real.len(), self.synthetic.len(), self.unlabeled.len()]
    }

    /// Number of images fed to the encoder (a corresponding pair counts twice).
    pub fn image_count(&self) -> usize {
        2 * self.corresponding.len() + self.real.len() + self.synthetic.len() + self.unlabeled.len()
    }
}

/// Which sets a batch draws and how they are augmented.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSpec {
    /// Samples per set; a batch holds four sets.
    pub per_set: usize,
    pub augment: AugmentConfig,
}

impl BatchSpec {
    pub fn new(batch: usize, augment: AugmentConfig) -> Result<Self> {
        if batch == 0 || batch % 4 != 0 {
            return Err(Error::InvalidArgument(format!("batch size {batch} is not a positive multiple of 4")));
        }
        Ok(BatchSpec { per_set: batch / 4, augment })
    }

    pub fn batch(&self) -> usize {
        4 * self.per_set
    }
}

/// Iterations per epoch, always counted against the real training set.
pub fn iterations_per_epoch(dataset: &Dataset, batch: usize) -> usize {
    dataset.train_ids().len().div_ceil(batch.max(1)).max(1)
}

fn scale(dataset: &Dataset) -> CropScale {
    let h = dataset.header();
    CropScale { mm_per_pixel: h.mm_per_pixel as f64, depth_range_mm: h.depth_range_mm as f64 }
}

fn views(rec: &Record, domain: Domain) -> &[DepthImage] {
    match domain {
        Domain::Synthetic => &rec.synthetic,
        Domain::Real => &rec.real,
    }
}

fn load(rec: &Record, domain: Domain, pose: Option<&Pose>, params: &AugmentParams, scale: &CropScale) -> BatchItem {
    let v = views(rec, domain);
    let (input, pose) = augment(&v[INPUT_VIEW], pose, params, scale);
    BatchItem { id: rec.id, domain, input, target: v[TARGET_VIEW].clone(), pose }
}

fn pick<R: Rng>(pool: &[u32], set: &'static str, k: usize, rng: &mut R) -> Result<Vec<u32>> {
    if pool.is_empty() {
        return Err(Error::InsufficientPool { set, available: 0 });
    }
    Ok((0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

/// Draws one mini-batch.
///
/// Each set is sampled uniformly with replacement and independently of the
/// others. The corresponding and real sets come from the first
/// `guard.n_labeled()` labeled ids; the synthetic and unlabeled sets from every
/// training id. Unlabeled samples never touch a pose.
pub fn compose_batch<R: Rng>(
    dataset: &Dataset,
    guard: &LabelGuard,
    spec: &BatchSpec,
    rng: &mut R,
) -> Result<BatchComposition> {
    let h = dataset.header();
    if !h.domains.has_real() || !h.domains.has_synthetic() || (h.views as usize) <= TARGET_VIEW {
        return Err(Error::InvalidArgument("batches need both domains and at least two views".into()));
    }
    let labeled = dataset.labeled_ids(guard.n_labeled());
    let train = dataset.train_ids();
    let sc = scale(dataset);
    let k = spec.per_set;

    let mut corresponding = Vec::with_capacity(k);
    for id in pick(&labeled, "corresponding", k, rng)? {
        let rec = dataset.record(id);
        let pose = guard.real_pose(rec)?;
        let params = AugmentParams::draw(&spec.augment, rng);
        let real_params = params.with_noise_seed(rng.random());
        corresponding.push((
            load(rec, Domain::Synthetic, Some(pose), &params, &sc),
            load(rec, Domain::Real, Some(pose), &real_params, &sc),
        ));
    }
    let mut real = Vec::with_capacity(k);
    for id in pick(&labeled, "real", k, rng)? {
        let rec = dataset.record(id);
        let pose = guard.real_pose(rec)?;
        let params = AugmentParams::draw(&spec.augment, rng);
        real.push(load(rec, Domain::Real, Some(pose), &params, &sc));
    }
    let mut synthetic = Vec::with_capacity(k);
    for id in pick(&train, "synthetic", k, rng)? {
        let rec = dataset.record(id);
        let pose = guard.synthetic_pose(rec)?;
        let params = AugmentParams::draw(&spec.augment, rng);
        synthetic.push(load(rec, Domain::Synthetic, Some(pose), &params, &sc));
    }
    let mut unlabeled = Vec::with_capacity(k);
    for id in pick(&train, "unlabeled", k, rng)? {
        let params = AugmentParams::draw(&spec.augment, rng);
        unlabeled.push(load(dataset.record(id), Domain::Real, None, &params, &sc));
    }
    Ok(BatchComposition { corresponding, real, synthetic, unlabeled })
}

/// A batch of labeled synthetic samples only, for synthetic pretraining.
pub fn synthetic_batch<R: Rng>(
    dataset: &Dataset,
    guard: &LabelGuard,
    size: usize,
    augment_cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<BatchItem>> {
    let sc = scale(dataset);
    pick(&dataset.train_ids(), "synthetic", size, rng)?
        .into_iter()
        .map(|id| {
            let rec = dataset.record(id);
            let pose = guard.synthetic_pose(rec)?;
            let params = AugmentParams::draw(augment_cfg, rng);
            Ok(load(rec, Domain::Synthetic, Some(pose), &params, &sc))
        })
        .collect()
}
