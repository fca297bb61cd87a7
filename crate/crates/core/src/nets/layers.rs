use latentmap_autodiff::{NormMode, Real, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::store::{Ctx, Mode, Net, NormUpdate, ParamId, ParamStore, Role};
use crate::error::Result;

/// He-normal values, `N(0, 2 / fan_in)`.
fn he<T: Real, R: Rng>(n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive fan-in");
    (0..n).map(|_| T::from_f64(d.sample(rng))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    He,
    Zero,
}

fn init<T: Real, R: Rng>(kind: Init, n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    match kind {
        Init::He => he(n, fan_in, rng),
        Init::Zero => vec![T::zero(); n],
    }
}

/// `y = x W + b` with `x [N, in]`, `W [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        net: Net,
        name: &str,
        inputs: usize,
        outputs: usize,
        kind: Init,
    ) -> Self {
        let w = store.add(net, format!("{name}.weight"), &[inputs, outputs], Role::Param, init(kind, inputs * outputs, inputs, rng));
        let b = store.add(net, format!("{name}.bias"), &[outputs], Role::Param, vec![T::zero(); outputs]);
        Linear { w, b, inputs, outputs }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.w)?, ctx.param(self.b)?);
        let y = ctx.g.matmul(x, w)?;
        Ok(ctx.g.add_bias(y, b)?)
    }
}

/// Square-kernel convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        net: Net,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let w = store.add(
            net,
            format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            Role::Param,
            he(cout * fan_in, fan_in, rng),
        );
        let b = store.add(net, format!("{name}.bias"), &[cout], Role::Param, vec![T::zero(); cout]);
        Conv { w, b, stride, pad }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.w)?, ctx.param(self.b)?);
        let y = ctx.g.conv2d(x, w, self.stride, self.pad)?;
        Ok(ctx.g.add_bias(y, b)?)
    }
}

/// Transposed convolution with bias; weights `[Cin, Cout, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        net: Net,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        // each output pixel sees about cin * k^2 / s^2 inputs
        let fan_in = (cin * kernel * kernel / (stride * stride)).max(1);
        let w = store.add(
            net,
            format!("{name}.weight"),
            &[cin, cout, kernel, kernel],
            Role::Param,
            he(cin * cout * kernel * kernel, fan_in, rng),
        );
        let b = store.add(net, format!("{name}.bias"), &[cout], Role::Param, vec![T::zero(); cout]);
        ConvTranspose { w, b, stride, pad }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.w)?, ctx.param(self.b)?);
        let y = ctx.g.conv_transpose2d(x, w, self.stride, self.pad)?;
        Ok(ctx.g.add_bias(y, b)?)
    }
}

/// Batch normalization with learned scale/shift and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, net: Net, name: &str, channels: usize, eps: f64) -> Self {
        BatchNorm {
            gamma: store.add(net, format!("{name}.gamma"), &[channels], Role::Param, vec![T::one(); channels]),
            beta: store.add(net, format!("{name}.beta"), &[channels], Role::Param, vec![T::zero(); channels]),
            running_mean: store.add(net, format!("{name}.running_mean"), &[channels], Role::Buffer, vec![T::zero(); channels]),
            running_var: store.add(net, format!("{name}.running_var"), &[channels], Role::Buffer, vec![T::one(); channels]),
            eps,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.param(self.gamma)?, ctx.param(self.beta)?);
        let store = ctx.source(ctx.net_of(self.running_mean));
        let mode = match ctx.mode() {
            Mode::Train => NormMode::Batch,
            Mode::Eval => NormMode::Running { mean: store.values(self.running_mean), var: store.values(self.running_var) },
        };
        let (y, moments) = ctx.g.batch_norm(x, gamma, beta, mode, self.eps)?;
        if let Some(moments) = moments {
            ctx.push_norm_update(NormUpdate { mean: self.running_mean, var: self.running_var, moments });
        }
        Ok(y)
    }
}

/// `relu(x + conv2(relu(conv1(x))))`, with a strided 1x1 projection on the skip
/// path when the shape changes.
#[derive(Debug, Clone)]
pub struct ResidualConv {
    pub conv1: Conv,
    pub conv2: Conv,
    pub project: Option<Conv>,
}

impl ResidualConv {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        net: Net,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        let conv1 = Conv::new(store, rng, net, &format!("{name}.conv1"), cin, cout, 3, stride, 1);
        let conv2 = Conv::new(store, rng, net, &format!("{name}.conv2"), cout, cout, 3, 1, 1);
        let project =
            (cin != cout || stride != 1).then(|| Conv::new(store, rng, net, &format!("{name}.project"), cin, cout, 1, stride, 0));
        ResidualConv { conv1, conv2, project }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?;
        let h = ctx.g.relu(h);
        let h = self.conv2.forward(ctx, h)?;
        let skip = match &self.project {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        let y = ctx.g.add(skip, h)?;
        Ok(ctx.g.relu(y))
    }
}

/// `x + W2 relu(W1 x + b1) + b2` on `[N, D]`.
#[derive(Debug, Clone)]
pub struct ResidualDense {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ResidualDense {
    /// With `identity_init` the second layer starts at zero, so the block is the identity.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        net: Net,
        name: &str,
        width: usize,
        identity_init: bool,
    ) -> Self {
        let fc1 = Linear::new(store, rng, net, &format!("{name}.fc1"), width, width, Init::He);
        let kind = if identity_init { Init::Zero } else { Init::He };
        let fc2 = Linear::new(store, rng, net, &format!("{name}.fc2"), width, width, kind);
        ResidualDense { fc1, fc2 }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.g.relu(h);
        let h = self.fc2.forward(ctx, h)?;
        Ok(ctx.g.add(x, h)?)
    }
}
