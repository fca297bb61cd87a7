//! Evaluation metrics and latent-space analyses.
//!
//! All CSV floats are written with nine significant digits.

use std::io::Write;

use latentmap_autodiff::Real;

use crate::datapipe::{Dataset, Domain, Split, INPUT_VIEW, TARGET_VIEW};
use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::nets::{Ctx, Mode, Model, ParamStore};
use crate::pose::Pose;

/// Nine significant digits in scientific notation.
pub fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

/// Mean joint error and its breakdowns, in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_error: f64,
    pub per_joint: Vec<f64>,
    /// Largest joint error of each frame.
    pub per_frame_max: Vec<f64>,
    /// Mean joint error of each frame.
    pub per_frame_mean: Vec<f64>,
    pub frames: usize,
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["frame", "mean_error_mm", "max_error_mm"]).map_err(csv_err)?;
        for (i, (m, x)) in self.per_frame_mean.iter().zip(&self.per_frame_max).enumerate() {
            out.write_record([i.to_string(), sig9(*m), sig9(*x)]).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::format("csv", e.to_string()))
    }
}

pub fn mean_joint_error(predicted: &[Pose], truth: &[Pose]) -> Result<EvalReport> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} frames", predicted.len(), truth.len())));
    }
    let j = truth[0].joint_count();
    let mut per_joint = vec![0.0; j];
    let mut per_frame_max = Vec::with_capacity(truth.len());
    let mut per_frame_mean = Vec::with_capacity(truth.len());
    for (p, t) in predicted.iter().zip(truth) {
        if p.joint_count() != j || t.joint_count() != j {
            return Err(Error::InvalidArgument("joint counts differ between frames".into()));
        }
        let d = p.joint_distances(t);
        for (acc, v) in per_joint.iter_mut().zip(&d) {
            *acc += v;
        }
        per_frame_max.push(d.iter().copied().fold(0.0, f64::max));
        per_frame_mean.push(d.iter().sum::<f64>() / j as f64);
    }
    let frames = truth.len();
    per_joint.iter_mut().for_each(|v| *v /= frames as f64);
    let mean_error = per_frame_mean.iter().sum::<f64>() / frames as f64;
    Ok(EvalReport { mean_error, per_joint, per_frame_max, per_frame_mean, frames })
}

/// Mean absolute pixel difference over all images.
pub fn view_prediction_mae(predicted: &[DepthImage], target: &[DepthImage]) -> Result<f64> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(Error::InvalidArgument(format!("{} predicted views for {} targets", predicted.len(), target.len())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in predicted.iter().zip(target) {
        if p.size() != t.size() {
            return Err(Error::InvalidArgument("view sizes differ".into()));
        }
        sum += p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>();
        n += p.data().len();
    }
    Ok(sum / n as f64)
}

/// Test ids outside the validation subset.
pub fn held_out_test_ids(data: &Dataset) -> Vec<u32> {
    data.ids_where(|r| r.split == Split::Test)
}

/// Network outputs for a list of samples, in id order.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub latents: Vec<Vec<f32>>,
    /// Millimeters.
    pub poses: Vec<Pose>,
    pub views: Vec<DepthImage>,
}

const EVAL_CHUNK: usize = 128;

/// Inference in eval mode on the unaugmented input view of `ids`.
///
/// Real inputs take the path `f -> m`, synthetic inputs `f`. Views are only
/// decoded when `with_views` is set.
pub fn infer(model: &Model, store: &ParamStore<f32>, data: &Dataset, ids: &[u32], domain: Domain, with_views: bool) -> Result<Outputs> {
    let mut out = Outputs::default();
    let res = data.resolution();
    let scale = data.pose_scale_mm();
    for chunk in ids.chunks(EVAL_CHUNK) {
        let mut pixels = Vec::with_capacity(chunk.len() * res * res);
        for &id in chunk {
            let rec = data.record(id);
            let views = match domain {
                Domain::Synthetic => &rec.synthetic,
                Domain::Real => &rec.real,
            };
            let view = views.get(INPUT_VIEW).ok_or_else(|| Error::InvalidArgument(format!("sample {id} lacks the {domain:?} domain")))?;
            pixels.extend_from_slice(view.data());
        }
        let mut ctx = Ctx::new(store, &[], Mode::Eval);
        let x = model.images(&mut ctx, &pixels, chunk.len())?;
        let domains = vec![domain; chunk.len()];
        let z = model.latents(&mut ctx, x, &domains, None)?;
        let y = model.pose(&mut ctx, z, None)?;
        let d = model.config.latent;
        out.latents.extend(ctx.g.value(z).chunks(d).map(<[f32]>::to_vec));
        let j3 = 3 * model.config.joints;
        out.poses.extend(
            ctx.g.value(y).chunks(j3).map(|c| Pose::from_flat(&c.iter().map(|&v| Real::to_f64(v) * scale).collect::<Vec<_>>())),
        );
        if with_views {
            let v = model.view(&mut ctx, z, None)?;
            out.views.extend(ctx.g.value(v).chunks(res * res).map(|c| DepthImage::new(res, c.to_vec())));
        }
    }
    Ok(out)
}

/// Mean joint error of `ids` in `domain` against their ground truth.
pub fn evaluate(model: &Model, store: &ParamStore<f32>, data: &Dataset, ids: &[u32], domain: Domain) -> Result<EvalReport> {
    let out = infer(model, store, data, ids, domain, false)?;
    let truth: Vec<Pose> = ids.iter().map(|&id| data.record(id).pose_unguarded().clone()).collect();
    mean_joint_error(&out.poses, &truth)
}

/// View-prediction MAE of `ids` in `domain` against their second view.
pub fn evaluate_views(model: &Model, store: &ParamStore<f32>, data: &Dataset, ids: &[u32], domain: Domain) -> Result<f64> {
    let out = infer(model, store, data, ids, domain, true)?;
    let targets: Vec<DepthImage> = ids
        .iter()
        .map(|&id| {
            let rec = data.record(id);
            let v = if domain == Domain::Real { &rec.real } else { &rec.synthetic };
            v[TARGET_VIEW].clone()
        })
        .collect();
    view_prediction_mae(&out.views, &targets)
}

pub const HISTOGRAM_BINS: usize = 50;

/// Latent distances between corresponding real and synthetic samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceDistribution {
    pub ids: Vec<u32>,
    pub distances: Vec<f64>,
    pub median: f64,
    /// Upper edge of the histogram support, which starts at 0.
    pub upper: f64,
    pub counts: Vec<usize>,
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Common histogram support for several distributions: the 99th percentile of
/// all distances pooled.
pub fn shared_support(sets: &[&[f64]]) -> f64 {
    let pooled: Vec<f64> = sets.iter().flat_map(|s| s.iter().copied()).collect();
    percentile(&pooled, 99.0)
}

impl DistanceDistribution {
    /// Histogram over `[0, upper]`; values above `upper` land in the last bin.
    pub fn new(ids: Vec<u32>, distances: Vec<f64>, upper: f64) -> Self {
        let mut counts = vec![0; HISTOGRAM_BINS];
        let width = upper / HISTOGRAM_BINS as f64;
        for &d in &distances {
            let b = if width > 0.0 { (d / width).floor() as usize } else { 0 };
            counts[b.min(HISTOGRAM_BINS - 1)] += 1;
        }
        let median = median(&distances);
        DistanceDistribution { ids, distances, median, upper, counts }
    }

    /// Histogram with its own 99th-percentile support.
    pub fn own_support(ids: Vec<u32>, distances: Vec<f64>) -> Self {
        let upper = percentile(&distances, 99.0);
        Self::new(ids, distances, upper)
    }

    pub fn write_histogram_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_low", "bin_high", "count"]).map_err(csv_err)?;
        let width = self.upper / HISTOGRAM_BINS as f64;
        for (i, c) in self.counts.iter().enumerate() {
            out.write_record([sig9(i as f64 * width), sig9((i + 1) as f64 * width), c.to_string()]).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::format("csv", e.to_string()))
    }

    pub fn write_distances_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "distance"]).map_err(csv_err)?;
        for (id, d) in self.ids.iter().zip(&self.distances) {
            out.write_record([id.to_string(), sig9(*d)]).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::format("csv", e.to_string()))
    }
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

/// `||m(f(x_real)) - f(x_synthetic)||` for each id.
pub fn latent_distances(model: &Model, store: &ParamStore<f32>, data: &Dataset, ids: &[u32]) -> Result<Vec<f64>> {
    let real = infer(model, store, data, ids, Domain::Real, false)?;
    let syn = infer(model, store, data, ids, Domain::Synthetic, false)?;
    Ok(real.latents.iter().zip(&syn.latents).map(|(a, b)| l2(a, b)).collect())
}

/// Mean L1 difference between the views predicted from the real and from the
/// synthetic image of each id.
pub fn cross_domain_view_gap(model: &Model, store: &ParamStore<f32>, data: &Dataset, ids: &[u32]) -> Result<Vec<f64>> {
    let real = infer(model, store, data, ids, Domain::Real, true)?;
    let syn = infer(model, store, data, ids, Domain::Synthetic, true)?;
    Ok(real.views.iter().zip(&syn.views).map(|(a, b)| a.mean_abs_diff(b)).collect())
}

/// Writes `id, domain, split, z_0.., pose..` for both domains of each id.
///
/// Poses are read without the label guard; this is an offline analysis.
pub fn export_embeddings<W: Write>(model: &Model, store: &ParamStore<f32>, data: &Dataset, ids: &[u32], w: W) -> Result<usize> {
    let mut out = csv::Writer::from_writer(w);
    let d = model.config.latent;
    let j = model.config.joints;
    let mut header = vec!["id".to_string(), "domain".into(), "split".into()];
    header.extend((0..d).map(|i| format!("z{i}")));
    for k in 0..j {
        header.extend(["x", "y", "z"].map(|a| format!("j{k}_{a}")));
    }
    out.write_record(&header).map_err(csv_err)?;
    let mut rows = 0;
    for domain in [Domain::Synthetic, Domain::Real] {
        let o = infer(model, store, data, ids, domain, false)?;
        for (&id, z) in ids.iter().zip(&o.latents) {
            let rec = data.record(id);
            let split = match rec.split {
                Split::Train => "train",
                Split::Test => "test",
                Split::Validation => "validation",
            };
            let name = if domain == Domain::Real { "real" } else { "synthetic" };
            let mut row = vec![id.to_string(), name.to_string(), split.to_string()];
            row.extend(z.iter().map(|&v| sig9(v as f64)));
            row.extend(rec.pose_unguarded().flat().iter().map(|&v| sig9(v)));
            out.write_record(&row).map_err(csv_err)?;
            rows += 1;
        }
    }
    out.flush().map_err(|e| Error::format("csv", e.to_string()))?;
    Ok(rows)
}

/// Mean joint distance after moving both poses' centroids to the origin.
pub fn centered_pose_distance(a: &Pose, b: &Pose) -> f64 {
    a.centered().mean_joint_distance(&b.centered())
}

/// One badly predicted test frame and its closest training poses.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborReport {
    pub test_id: u32,
    pub error: f64,
    /// `(train id, centered pose distance)`, nearest first.
    pub neighbors: Vec<(u32, f64)>,
}

/// For the `worst` test frames with the largest error, the `k` nearest training
/// poses under [`centered_pose_distance`].
///
/// Ties are broken by the smaller id.
pub fn nn_error_analysis(
    test: &[(u32, f64, Pose)],
    train: &[(u32, Pose)],
    worst: usize,
    k: usize,
) -> Vec<NeighborReport> {
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.sort_by(|&a, &b| test[b].1.total_cmp(&test[a].1).then(test[a].0.cmp(&test[b].0)));
    let centered: Vec<(u32, Pose)> = train.iter().map(|(id, p)| (*id, p.centered())).collect();
    order
        .into_iter()
        .take(worst)
        .map(|i| {
            let (id, err, pose) = &test[i];
            let c = pose.centered();
            let mut d: Vec<(u32, f64)> = centered.iter().map(|(tid, p)| (*tid, c.mean_joint_distance(p))).collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            NeighborReport { test_id: *id, error: *err, neighbors: d }
        })
        .collect()
}

pub fn write_nn_csv<W: Write>(reports: &[NeighborReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["test_id", "error_mm", "rank", "train_id", "pose_distance_mm"]).map_err(csv_err)?;
    for r in reports {
        for (rank, (tid, d)) in r.neighbors.iter().enumerate() {
            out.write_record([r.test_id.to_string(), sig9(r.error), (rank + 1).to_string(), tid.to_string(), sig9(*d)])
                .map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::format("csv", e.to_string()))
}
