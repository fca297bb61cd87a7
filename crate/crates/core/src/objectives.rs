//! Loss terms on the tape, all with sum reduction.
//!
//! Every function takes and returns tape variables so the terms differentiate
//! through whatever produced their inputs.

use latentmap_autodiff::{Graph, Real, Var};

use crate::error::{Error, Result};

/// LSGAN target for real latents.
pub const REAL_TARGET: f64 = 1.0;
/// LSGAN target for synthetic latents.
pub const SYNTHETIC_TARGET: f64 = 0.0;

/// Batch size the loss weights are calibrated for.
pub const REFERENCE_BATCH: usize = 64;

/// Weights of the auxiliary terms in the generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub correspondence: f64,
    pub view: f64,
    pub mapper: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { correspondence: 0.2, view: 1e-4, mapper: 1e-5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("correspondence", self.correspondence), ("view", self.view), ("mapper", self.mapper)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// Factor applied to the whole generator objective so sums over a batch of
/// `batch` samples stay on the scale of the reference batch.
pub fn batch_scale(batch: usize) -> f64 {
    REFERENCE_BATCH as f64 / batch.max(1) as f64
}

/// Scalar value of each term for one iteration; zero when inactive.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub pose: f64,
    pub correspondence: f64,
    pub view: f64,
    pub mapper: f64,
    pub discriminator: f64,
}

impl LossParts {
    /// `pose + w_c corr + w_g view + w_m mapper`. The discriminator term is
    /// never part of it.
    pub fn composite(&self, w: &LossWeights) -> f64 {
        self.pose + w.correspondence * self.correspondence + w.view * self.view + w.mapper * self.mapper
    }
}

fn check_same<T: Real>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::InvalidArgument(format!("{what}: shapes {:?} and {:?} differ", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Squared L2 distance between predicted and true poses, summed over samples.
pub fn pose_loss<T: Real>(g: &mut Graph<T>, predicted: Var, target: Var) -> Result<Var> {
    check_same(g, predicted, target, "pose loss")?;
    let d = g.sub(target, predicted)?;
    Ok(g.l2_norm_squared(d))
}

/// Squared L2 distance between mapped real latents and their synthetic
/// counterparts.
///
/// With `detach_synthetic` the synthetic latents are a constant target and
/// only the real branch receives gradient.
pub fn correspondence_loss<T: Real>(g: &mut Graph<T>, mapped_real: Var, synthetic: Var, detach_synthetic: bool) -> Result<Var> {
    check_same(g, mapped_real, synthetic, "correspondence loss")?;
    let target = if detach_synthetic { g.detach(synthetic) } else { synthetic };
    let d = g.sub(target, mapped_real)?;
    Ok(g.l2_norm_squared(d))
}

/// L1 distance between predicted and observed second views.
pub fn view_loss<T: Real>(g: &mut Graph<T>, predicted: Var, target: Var) -> Result<Var> {
    check_same(g, predicted, target, "view loss")?;
    let d = g.sub(target, predicted)?;
    let a = g.abs(d);
    Ok(g.sum(a))
}

/// `0.5 * sum (s - target)^2`.
fn half_squared_to<T: Real>(g: &mut Graph<T>, scores: Var, target: f64) -> Result<Var> {
    let shape = g.shape(scores).to_vec();
    let n: usize = shape.iter().product();
    let t = g.constant(vec![T::from_f64(target); n], &shape)?;
    let d = g.sub(scores, t)?;
    let s = g.l2_norm_squared(d);
    Ok(g.scalar_mul(s, 0.5))
}

/// Least-squares discriminator loss: real scores pushed to 1, synthetic to 0.
///
/// Either side may be absent.
pub fn discriminator_loss<T: Real>(g: &mut Graph<T>, real_scores: Option<Var>, synthetic_scores: Option<Var>) -> Result<Var> {
    let parts = [(real_scores, REAL_TARGET), (synthetic_scores, SYNTHETIC_TARGET)]
        .into_iter()
        .filter_map(|(s, t)| s.map(|s| half_squared_to(g, s, t)))
        .collect::<Result<Vec<_>>>()?;
    match parts[..] {
        [] => Err(Error::InvalidArgument("discriminator loss needs at least one score set".into())),
        [a] => Ok(a),
        [a, b] => Ok(g.add(a, b)?),
        _ => unreachable!(),
    }
}

/// Adversarial loss for the mapper: real scores pushed to the synthetic label.
pub fn mapper_adversarial_loss<T: Real>(g: &mut Graph<T>, real_scores: Var) -> Result<Var> {
    half_squared_to(g, real_scores, SYNTHETIC_TARGET)
}

/// Weighted generator objective on the tape. Absent terms count as zero.
pub struct Terms {
    pub pose: Option<Var>,
    pub correspondence: Option<Var>,
    pub view: Option<Var>,
    pub mapper: Option<Var>,
}

/// `scale * (pose + w_c corr + w_g view + w_m mapper)`.
pub fn composite_loss<T: Real>(g: &mut Graph<T>, terms: &Terms, w: &LossWeights, scale: f64) -> Result<Var> {
    let weighted = [(terms.pose, 1.0), (terms.correspondence, w.correspondence), (terms.view, w.view), (terms.mapper, w.mapper)];
    let mut total: Option<Var> = None;
    for (term, weight) in weighted {
        let Some(t) = term else { continue };
        let t = g.scalar_mul(t, weight * scale);
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("generator objective has no active term".into()))
}
