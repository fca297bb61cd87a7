use latentmap_autodiff::{Real, Var};
use rand::Rng;

use super::layers::{BatchNorm, ConvTranspose, Init, Linear, ResidualConv, ResidualDense, Conv};
use super::store::{Ctx, Net, ParamStore};
use crate::datapipe::Domain;
use crate::error::{Error, Result};

/// Shape template for the five networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Input and predicted-view side length.
    pub resolution: usize,
    pub joints: usize,
    /// Latent width D.
    pub latent: usize,
    /// Filters of the 5x5 stem convolution.
    pub stem: usize,
    /// Width of each residual stage; every stage after the first halves the resolution.
    pub stages: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Hidden width of the pose head.
    pub pose_hidden: usize,
    /// Channels after each hidden transposed convolution of the decoder.
    pub decoder_widths: Vec<usize>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub leaky_slope: f64,
}

impl NetConfig {
    /// Desk scale: 32x32 inputs, D = 64.
    pub fn desk(joints: usize) -> Self {
        NetConfig {
            resolution: 32,
            joints,
            latent: 64,
            stem: 32,
            stages: vec![16, 32, 64, 64],
            blocks_per_stage: 1,
            pose_hidden: 64,
            decoder_widths: vec![32, 16, 8],
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.resolution < 16 || !self.resolution.is_power_of_two() {
            return bad(format!("resolution {} must be a power of two >= 16", self.resolution));
        }
        if self.stages.is_empty() || self.stages.contains(&0) || self.stem == 0 || self.latent == 0 {
            return bad("network widths must be positive".into());
        }
        if self.blocks_per_stage == 0 || self.pose_hidden == 0 || self.joints == 0 {
            return bad("blocks per stage, pose width and joint count must be positive".into());
        }
        let after_pool = self.resolution / 2;
        if after_pool >> (self.stages.len() - 1) == 0 {
            return bad(format!("{} stages downsample a {}px input below one pixel", self.stages.len(), self.resolution));
        }
        if self.decoder_widths.is_empty() || self.decoder_widths.contains(&0) {
            return bad("decoder needs positive hidden widths".into());
        }
        if (4usize << self.decoder_widths.len()) < self.resolution / 2 {
            return bad(format!(
                "{} transposed convolutions cannot reach a {}px output",
                self.decoder_widths.len() + 1,
                self.resolution
            ));
        }
        Ok(())
    }

    /// Side length of the encoder's last feature map.
    pub fn encoder_grid(&self) -> usize {
        (self.resolution / 2) >> (self.stages.len() - 1)
    }
}

/// Conv stem, max-pool, residual stages, linear projection to the latent.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub stem: Conv,
    pub blocks: Vec<ResidualConv>,
    pub fc: Linear,
    flat: usize,
}

impl Encoder {
    pub fn new<T: Real, R: Rng>(cfg: &NetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let stem = Conv::new(store, rng, Net::F, "stem", 1, cfg.stem, 5, 1, 2);
        let mut blocks = Vec::new();
        let mut cin = cfg.stem;
        for (s, &width) in cfg.stages.iter().enumerate() {
            for b in 0..cfg.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResidualConv::new(store, rng, Net::F, &format!("stage{s}.block{b}"), cin, width, stride));
                cin = width;
            }
        }
        let grid = cfg.encoder_grid();
        let flat = cin * grid * grid;
        let fc = Linear::new(store, rng, Net::F, "fc", flat, cfg.latent, Init::He);
        Encoder { stem, blocks, fc, flat }
    }

    /// `x [N, 1, R, R]` to `z [N, D]`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let n = ctx.g.shape(x)[0];
        let h = self.stem.forward(ctx, x)?;
        let h = ctx.g.relu(h);
        let mut h = ctx.g.max_pool2x2(h)?;
        for b in &self.blocks {
            h = b.forward(ctx, h)?;
        }
        let h = ctx.g.reshape(h, &[n, self.flat])?;
        self.fc.forward(ctx, h)
    }
}

/// Two identity-initialized residual blocks on the latent.
#[derive(Debug, Clone)]
pub struct Mapper {
    pub blocks: Vec<ResidualDense>,
}

impl Mapper {
    pub fn new<T: Real, R: Rng>(cfg: &NetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let blocks = (0..2).map(|i| ResidualDense::new(store, rng, Net::M, &format!("block{i}"), cfg.latent, true)).collect();
        Mapper { blocks }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let mut h = z;
        for b in &self.blocks {
            h = b.forward(ctx, h)?;
        }
        Ok(h)
    }
}

/// Two fully connected layers, the second producing `3J` normalized coordinates.
#[derive(Debug, Clone)]
pub struct PoseHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl PoseHead {
    pub fn new<T: Real, R: Rng>(cfg: &NetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        PoseHead {
            fc1: Linear::new(store, rng, Net::P, "fc1", cfg.latent, cfg.pose_hidden, Init::He),
            fc2: Linear::new(store, rng, Net::P, "fc2", cfg.pose_hidden, 3 * cfg.joints, Init::He),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let h = self.fc1.forward(ctx, z)?;
        let h = ctx.g.relu(h);
        self.fc2.forward(ctx, h)
    }
}

/// DCGAN-style decoder: transposed convolutions up to half resolution, bilinear
/// 2x upsampling, tanh.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<(ConvTranspose, Option<BatchNorm>)>,
    latent: usize,
    slope: f64,
}

impl Decoder {
    pub fn new<T: Real, R: Rng>(cfg: &NetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        let mut cin = cfg.latent;
        let mut side = 1;
        let target = cfg.resolution / 2;
        let widths = &cfg.decoder_widths;
        for (i, &w) in widths.iter().enumerate() {
            let name = format!("tconv{i}");
            let (k, s, p) = if i == 0 {
                (4, 1, 0)
            } else if side < target {
                (4, 2, 1)
            } else {
                (3, 1, 1)
            };
            side = if i == 0 { 4 } else { side * s };
            let t = ConvTranspose::new(store, rng, Net::G, &name, cin, w, k, s, p);
            let bn = BatchNorm::new(store, Net::G, &format!("bn{i}"), w, cfg.bn_eps);
            layers.push((t, Some(bn)));
            cin = w;
        }
        // output layer: one channel, no normalization so tanh sees an unconstrained range
        let (k, s, p) = if side < target { (4, 2, 1) } else { (3, 1, 1) };
        layers.push((ConvTranspose::new(store, rng, Net::G, &format!("tconv{}", widths.len()), cin, 1, k, s, p), None));
        Decoder { layers, latent: cfg.latent, slope: cfg.leaky_slope }
    }

    /// `z [N, D]` to an image `[N, 1, R, R]` in `(-1, 1)`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let n = ctx.g.shape(z)[0];
        let mut h = ctx.g.reshape(z, &[n, self.latent, 1, 1])?;
        for (t, bn) in &self.layers {
            h = t.forward(ctx, h)?;
            if let Some(bn) = bn {
                h = bn.forward(ctx, h)?;
                h = ctx.g.leaky_relu(h, self.slope);
            }
        }
        let h = ctx.g.upsample2x(h)?;
        Ok(ctx.g.tanh(h))
    }
}

/// Mapper-shaped trunk plus a linear scalar output.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub blocks: Vec<ResidualDense>,
    pub out: Linear,
}

impl Discriminator {
    pub fn new<T: Real, R: Rng>(cfg: &NetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let blocks = (0..2).map(|i| ResidualDense::new(store, rng, Net::H, &format!("block{i}"), cfg.latent, false)).collect();
        let out = Linear::new(store, rng, Net::H, "out", cfg.latent, 1, Init::He);
        Discriminator { blocks, out }
    }

    /// `z [N, D]` to unbounded scores `[N, 1]`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let mut h = z;
        for b in &self.blocks {
            h = b.forward(ctx, h)?;
        }
        self.out.forward(ctx, h)
    }
}

/// Records which networks each input row passed through.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouteTracer {
    routes: Vec<(Domain, Vec<Net>)>,
}

impl RouteTracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn routes(&self) -> &[(Domain, Vec<Net>)] {
        &self.routes
    }

    fn start(&mut self, domains: &[Domain]) {
        self.routes = domains.iter().map(|&d| (d, Vec::new())).collect();
    }

    fn extend(&mut self, rows: std::ops::Range<usize>, net: Net) {
        for r in &mut self.routes[rows] {
            r.1.push(net);
        }
    }

    /// True if every synthetic row avoided `m` and every real row went through it.
    pub fn routing_holds(&self) -> bool {
        self.routes.iter().all(|(d, path)| match d {
            Domain::Synthetic => !path.contains(&Net::M) && path.first() == Some(&Net::F),
            Domain::Real => path.starts_with(&[Net::F, Net::M]),
        })
    }
}

/// The five networks over one shared [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    pub config: NetConfig,
    pub f: Encoder,
    pub m: Mapper,
    pub p: PoseHead,
    pub g: Decoder,
    pub h: Discriminator,
}

impl Model {
    pub fn new<T: Real, R: Rng>(config: NetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let f = Encoder::new(&config, store, rng);
        let m = Mapper::new(&config, store, rng);
        let p = PoseHead::new(&config, store, rng);
        let g = Decoder::new(&config, store, rng);
        let h = Discriminator::new(&config, store, rng);
        Ok(Model { config, f, m, p, g, h })
    }

    /// Builds a fresh store and model from a seed.
    pub fn init<T: Real>(config: NetConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, "init", 0));
        let mut store = ParamStore::new();
        let model = Model::new(config, &mut store, &mut rng)?;
        Ok((model, store))
    }

    /// Places a batch of images `[N, 1, R, R]` on the tape.
    pub fn images<T: Real>(&self, ctx: &mut Ctx<'_, T>, pixels: &[f32], n: usize) -> Result<Var> {
        let r = self.config.resolution;
        if pixels.len() != n * r * r {
            return Err(Error::InvalidArgument(format!("{} pixels for {n} images of {r}x{r}", pixels.len())));
        }
        ctx.input(pixels.iter().map(|&v| T::from_f64(v as f64)).collect(), &[n, 1, r, r])
    }

    /// Shared-space latents: `f(x)` for synthetic rows, `m(f(x))` for real rows.
    ///
    /// Rows must be ordered with all synthetic rows before all real rows.
    pub fn latents<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        domains: &[Domain],
        mut tracer: Option<&mut RouteTracer>,
    ) -> Result<Var> {
        let n = domains.len();
        if ctx.g.shape(x)[0] != n {
            return Err(Error::InvalidArgument(format!("{} domain tags for {} rows", n, ctx.g.shape(x)[0])));
        }
        let n_syn = domains.iter().take_while(|&&d| d == Domain::Synthetic).count();
        if domains[n_syn..].iter().any(|&d| d == Domain::Synthetic) {
            return Err(Error::InvalidArgument("synthetic rows must precede real rows".into()));
        }
        if let Some(t) = tracer.as_deref_mut() {
            t.start(domains);
            t.extend(0..n, Net::F);
        }
        let z = self.f.forward(ctx, x)?;
        if n_syn == n {
            return Ok(z);
        }
        let real = ctx.g.slice_rows(z, n_syn, n - n_syn)?;
        let mapped = self.m.forward(ctx, real)?;
        if let Some(t) = tracer.as_deref_mut() {
            t.extend(n_syn..n, Net::M);
        }
        if n_syn == 0 {
            return Ok(mapped);
        }
        let syn = ctx.g.slice_rows(z, 0, n_syn)?;
        Ok(ctx.g.concat_rows(&[syn, mapped])?)
    }

    /// Pose predictions `[N, 3J]` (normalized units) for latents `z`.
    pub fn pose<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var, tracer: Option<&mut RouteTracer>) -> Result<Var> {
        if let Some(t) = tracer {
            let n = t.routes.len();
            t.extend(0..n, Net::P);
        }
        self.p.forward(ctx, z)
    }

    /// Predicted second views `[N, 1, R, R]`.
    pub fn view<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var, tracer: Option<&mut RouteTracer>) -> Result<Var> {
        if let Some(t) = tracer {
            let n = t.routes.len();
            t.extend(0..n, Net::G);
        }
        self.g.forward(ctx, z)
    }

    /// Discriminator scores `[N, 1]`.
    pub fn discriminate<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        self.h.forward(ctx, z)
    }
}
