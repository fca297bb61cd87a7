//! Adam and the epoch-wise learning-rate schedule.

use latentmap_autodiff::Real;

use crate::error::{Error, Result};
use crate::nets::{CheckpointEntry, EntryKind, Net, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    /// Base learning rate.
    pub alpha0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Exponential decay rate per epoch after warm-up.
    pub decay: f64,
    pub batch: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { alpha0: 3.3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: 0.04, batch: 64 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("alpha0", self.alpha0), ("beta1", self.beta1), ("beta2", self.beta2), ("eps", self.eps), ("decay", self.decay)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("Adam betas must be below 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for 0-based epoch `e`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        schedule_factor(epoch, self.decay) * self.alpha0
    }
}

/// Multiplier of the base rate: warm-up in steps of 0.33 over the first four
/// epochs, exponential decay afterwards. The two pieces do not meet at e = 4.
pub fn schedule_factor(epoch: usize, decay: f64) -> f64 {
    if epoch < 4 {
        0.33f64.powi(2 - (epoch / 2) as i32)
    } else {
        (-decay * epoch as f64).exp()
    }
}

/// Epoch, epoch length and current rate of a training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub epoch: usize,
    pub iterations_per_epoch: usize,
    pub lr: f64,
}

impl ScheduleState {
    /// Schedule position after `iteration` completed steps of a phase.
    pub fn at(cfg: &OptimConfig, iteration: usize, iterations_per_epoch: usize) -> Self {
        let epoch = iteration / iterations_per_epoch.max(1);
        ScheduleState { epoch, iterations_per_epoch, lr: cfg.lr_at(epoch) }
    }
}

/// Adam over a fixed subset of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    /// First and second moments, indexed like the store.
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: &OptimConfig) -> Self {
        Adam { beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, steps: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self, id: ParamId) -> Option<(&[T], &[T])> {
        self.moments.get(id.index())?.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One bias-corrected update of every parameter in `grads`.
    ///
    /// All gradients are checked before anything is written, so a non-finite
    /// gradient leaves both the store and the optimizer untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            let e = store.entry(*id);
            if g.len() != e.values.len() {
                return Err(Error::InvalidArgument(format!("gradient of {}.{} has {} values, expected {}", e.net, e.name, g.len(), e.values.len())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("{}.{}", e.net, e.name)));
            }
        }
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one, eps) = (T::one(), T::from_f64(self.eps));
        let c1 = T::from_f64(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(t));
        let lr = T::from_f64(lr);
        for (id, g) in grads {
            let n = g.len();
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let w = store.values_mut(*id);
            for i in 0..n {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as checkpoint entries, in store order.
    pub fn export(&self, store: &ParamStore<T>) -> Vec<CheckpointEntry> {
        let mut out = Vec::new();
        for id in store.ids() {
            let Some(Some((m, v))) = self.moments.get(id.index()) else { continue };
            let e = store.entry(id);
            for (kind, data) in [(EntryKind::AdamM, m), (EntryKind::AdamV, v)] {
                out.push(CheckpointEntry {
                    net: e.net.name().to_string(),
                    layer: e.name.clone(),
                    kind,
                    shape: e.shape.clone(),
                    data: data.iter().map(|x| Real::to_f64(*x) as f32).collect(),
                });
            }
        }
        out
    }

    /// Restores moments for the parameters of `nets` from checkpoint entries.
    pub fn import(&mut self, store: &ParamStore<T>, entries: &[CheckpointEntry], nets: &[Net], steps: u64) -> Result<()> {
        self.moments = vec![None; store.len()];
        self.steps = steps;
        for id in store.ids() {
            let e = store.entry(id);
            if !nets.contains(&e.net) {
                continue;
            }
            let find = |kind| {
                entries.iter().find(|c| c.kind == kind && c.net == e.net.name() && c.layer == e.name)
            };
            match (find(EntryKind::AdamM), find(EntryKind::AdamV)) {
                (Some(m), Some(v)) => {
                    if m.shape != e.shape || v.shape != e.shape {
                        return Err(Error::format("checkpoint", format!("optimizer state for {}.{} has the wrong shape", e.net, e.name)));
                    }
                    let conv = |d: &[f32]| d.iter().map(|&x| T::from_f64(x as f64)).collect::<Vec<T>>();
                    self.moments[id.index()] = Some((conv(&m.data), conv(&v.data)));
                }
                (None, None) => {}
                _ => return Err(Error::format("checkpoint", format!("incomplete optimizer state for {}.{}", e.net, e.name))),
            }
        }
        Ok(())
    }
}
