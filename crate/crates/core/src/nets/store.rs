use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;

use latentmap_autodiff::{BatchMoments, Graph, Real, Var};

use crate::error::{Error, Result};

/// The five parametric functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Net {
    /// Encoder f.
    F,
    /// Real-to-synthetic latent mapper m.
    M,
    /// Pose head p.
    P,
    /// View decoder g.
    G,
    /// Latent discriminator h.
    H,
}

impl Net {
    pub const ALL: [Net; 5] = [Net::F, Net::M, Net::P, Net::G, Net::H];

    pub fn name(self) -> &'static str {
        match self {
            Net::F => "f",
            Net::M => "m",
            Net::P => "p",
            Net::G => "g",
            Net::H => "h",
        }
    }

    pub fn from_name(s: &str) -> Option<Net> {
        Net::ALL.into_iter().find(|n| n.name() == s)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Net {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trainable weights versus state that is updated outside the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Param,
    /// Batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub net: Net,
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub values: Vec<T>,
}

/// Flat registry of every tensor the five networks own.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

/// Trainable scalar count per network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionReport {
    pub per_net: Vec<(Net, usize)>,
    pub total: usize,
}

impl fmt::Display for PartitionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (net, n) in &self.per_net {
            writeln!(f, "{net}: {n}")?;
        }
        write!(f, "total: {}", self.total)
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, net: Net, name: impl Into<String>, shape: &[usize], role: Role, values: Vec<T>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "values do not fill the shape");
        self.entries.push(ParamEntry { net, name: name.into(), shape: shape.to_vec(), role, values });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn values(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Trainable parameters of the given networks.
    pub fn trainable(&self, nets: &[Net]) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| {
                let e = self.entry(id);
                e.role == Role::Param && nets.contains(&e.net)
            })
            .collect()
    }

    pub fn partition(&self) -> PartitionReport {
        let per_net: Vec<(Net, usize)> = Net::ALL
            .iter()
            .map(|&net| {
                let n = self.entries.iter().filter(|e| e.net == net && e.role == Role::Param).map(|e| e.values.len()).sum();
                (net, n)
            })
            .collect();
        let total = self.entries.iter().filter(|e| e.role == Role::Param).map(|e| e.values.len()).sum();
        PartitionReport { per_net, total }
    }

    /// Hash of the exact bit patterns of every tensor owned by `net`.
    pub fn fingerprint(&self, net: Net) -> u64 {
        let mut h = DefaultHasher::new();
        for e in self.entries.iter().filter(|e| e.net == net) {
            for v in &e.values {
                h.write_u64(Real::to_f64(*v).to_bits());
            }
        }
        h.finish()
    }

    /// The same store at another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    net: e.net,
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    role: e.role,
                    values: e.values.iter().map(|v| U::from_f64(Real::to_f64(*v))).collect(),
                })
                .collect(),
        }
    }

    /// Copies values from `other`, which must have an identical layout.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.entries.len() != other.entries.len()
            || self.entries.iter().zip(&other.entries).any(|(a, b)| a.name != b.name || a.shape != b.shape || a.net != b.net)
        {
            return Err(Error::format("parameters", "layout mismatch"));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.values.clone_from(&b.values);
        }
        Ok(())
    }
}

/// Whether batch norm uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct NormUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub moments: BatchMoments<T>,
}

/// One forward/backward pass: a fresh tape plus the store it reads from.
///
/// Parameters are placed on the tape lazily. Those of networks listed as
/// trainable become gradient-tracking leaves, all others constants, so a
/// frozen network still passes gradient through to its inputs.
pub struct Ctx<'s, T: Real> {
    pub g: Graph<T>,
    sources: [&'s ParamStore<T>; 5],
    vars: Vec<Option<Var>>,
    trainable: [bool; 5],
    mode: Mode,
    norm_updates: Vec<NormUpdate<T>>,
}

impl<'s, T: Real> Ctx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, trainable: &[Net], mode: Mode) -> Self {
        let mut mask = [false; 5];
        for n in trainable {
            mask[n.index()] = true;
        }
        Ctx { g: Graph::new(), sources: [store; 5], vars: vec![None; store.len()], trainable: mask, mode, norm_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The store parameters of `net` are read from.
    pub fn source(&self, net: Net) -> &'s ParamStore<T> {
        self.sources[net.index()]
    }

    pub fn net_of(&self, id: ParamId) -> Net {
        self.sources[0].entry(id).net
    }

    /// Reads the parameters of `net` from `store` instead, which must share the
    /// layout. Only affects parameters not yet placed on the tape.
    pub fn bind(&mut self, net: Net, store: &'s ParamStore<T>) -> Result<()> {
        if store.len() != self.vars.len() {
            return Err(Error::InvalidArgument("bound store has a different layout".into()));
        }
        self.sources[net.index()] = store;
        Ok(())
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.vars[id.0] {
            return Ok(v);
        }
        let e = self.sources[0].entry(id);
        let e = self.sources[e.net.index()].entry(id);
        let v = if e.role == Role::Param && self.trainable[e.net.index()] {
            self.g.param(e.values.clone(), &e.shape)?
        } else {
            self.g.constant(e.values.clone(), &e.shape)?
        };
        self.vars[id.0] = Some(v);
        Ok(v)
    }

    pub fn input(&mut self, values: Vec<T>, shape: &[usize]) -> Result<Var> {
        Ok(self.g.constant(values, shape)?)
    }

    pub(crate) fn push_norm_update(&mut self, u: NormUpdate<T>) {
        self.norm_updates.push(u);
    }

    pub fn norm_updates(&self) -> &[NormUpdate<T>] {
        &self.norm_updates
    }

    pub fn take_norm_updates(&mut self) -> Vec<NormUpdate<T>> {
        std::mem::take(&mut self.norm_updates)
    }

    /// Gradients of every trainable parameter that took part in the last backward pass.
    pub fn grads(&self) -> Vec<(ParamId, Vec<T>)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                if !self.g.tensor(v).requires_grad() {
                    return None;
                }
                let shape_len = self.sources[0].entries[i].values.len();
                let grad = self.g.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); shape_len]);
                Some((ParamId(i), grad))
            })
            .collect()
    }
}

/// Folds batch statistics into running averages, `r <- (1 - momentum) r + momentum b`.
///
/// The running variance tracks the unbiased batch variance.
pub fn apply_norm_updates<T: Real>(store: &mut ParamStore<T>, updates: &[NormUpdate<T>], momentum: f64) {
    let mo = T::from_f64(momentum);
    let keep = T::one() - mo;
    for u in updates {
        let n = u.moments.count as f64;
        let unbias = T::from_f64(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
        for (r, &b) in store.values_mut(u.mean).iter_mut().zip(&u.moments.mean) {
            *r = keep * *r + mo * b;
        }
        for (r, &b) in store.values_mut(u.var).iter_mut().zip(&u.moments.var) {
            *r = keep * *r + mo * b * unbias;
        }
    }
}
