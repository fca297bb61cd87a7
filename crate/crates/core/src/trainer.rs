//! Synthetic pretraining, joint training with the discriminator step, and the
//! ablation variants.

use std::fmt;
use std::path::PathBuf;

use latentmap_autodiff::{Real, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{
    compose_batch, iterations_per_epoch, synthetic_batch, AugmentConfig, BatchComposition, BatchItem, BatchSpec, Dataset,
    Domain, LabelGuard,
};
use crate::error::{Error, Result};
use crate::nets::{apply_norm_updates, Checkpoint, EntryKind, Ctx, Mode, Model, Net, NetConfig, ParamStore};
use crate::objectives::{
    batch_scale, composite_loss, correspondence_loss, discriminator_loss, mapper_adversarial_loss, pose_loss, view_loss,
    LossParts, LossWeights, Terms,
};
use crate::optimizer::{Adam, OptimConfig, ScheduleState};
use crate::seed::derive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Real and synthetic data with pose and correspondence losses only.
    Baseline,
    ViewPred,
    DistrMatch,
    Full,
    /// Labeled real data only, trained from scratch.
    RealOnly,
    /// Synthetic pretraining only.
    SynthOnly,
}

/// Which parts of the method a variant uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveTerms {
    pub pretrain: bool,
    pub joint: bool,
    pub synthetic: bool,
    pub unlabeled: bool,
    pub correspondence: bool,
    pub view: bool,
    pub adversarial: bool,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Baseline, Variant::ViewPred, Variant::DistrMatch, Variant::Full, Variant::RealOnly, Variant::SynthOnly];
    /// The four systems of the ablation study.
    pub const ABLATION: [Variant; 4] = [Variant::Baseline, Variant::ViewPred, Variant::DistrMatch, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::ViewPred => "view-pred",
            Variant::DistrMatch => "distr-match",
            Variant::Full => "full",
            Variant::RealOnly => "real-only",
            Variant::SynthOnly => "synth-only",
        }
    }

    pub fn from_name(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn terms(self) -> ActiveTerms {
        let joint = |unlabeled, view, adversarial| ActiveTerms {
            pretrain: true,
            joint: true,
            synthetic: true,
            unlabeled,
            correspondence: true,
            view,
            adversarial,
        };
        match self {
            Variant::Baseline => joint(false, false, false),
            Variant::ViewPred => joint(true, true, false),
            Variant::DistrMatch => joint(true, false, true),
            Variant::Full => joint(true, true, true),
            Variant::RealOnly => ActiveTerms {
                pretrain: false,
                joint: true,
                synthetic: false,
                unlabeled: false,
                correspondence: false,
                view: false,
                adversarial: false,
            },
            Variant::SynthOnly => ActiveTerms {
                pretrain: true,
                joint: false,
                synthetic: true,
                unlabeled: false,
                correspondence: false,
                view: false,
                adversarial: false,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    /// Labeled real training samples; `None` means all of them.
    pub n_labeled: Option<usize>,
    pub pretrain_iters: usize,
    pub joint_iters: usize,
    pub weights: LossWeights,
    pub optim: OptimConfig,
    pub augment: AugmentConfig,
    pub net: NetConfig,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Keep the pose head fixed during joint training.
    pub freeze_pose: bool,
    /// Let the correspondence loss also pull synthetic latents toward real ones.
    pub correspondence_into_synthetic: bool,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Full,
            n_labeled: Some(100),
            pretrain_iters: 4000,
            joint_iters: 4000,
            weights: LossWeights::default(),
            optim: OptimConfig::default(),
            augment: AugmentConfig::default(),
            net: NetConfig::desk(7),
            seed: 0,
            checkpoint_every: 0,
            freeze_pose: false,
            correspondence_into_synthetic: false,
            dataset: PathBuf::from("data.mrds"),
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optim.validate()?;
        self.net.validate()?;
        if self.n_labeled == Some(0) && self.variant != Variant::SynthOnly {
            return Err(Error::Config(format!("variant {} needs at least one labeled real sample", self.variant)));
        }
        Ok(())
    }

    /// Labeled-real budget resolved against a dataset.
    pub fn labeled_count(&self, data: &Dataset) -> usize {
        let train = data.train_ids().len();
        self.n_labeled.map_or(train, |n| n.min(train))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Joint,
    Done,
}

impl Phase {
    fn code(self) -> u64 {
        match self {
            Phase::Pretrain => 0,
            Phase::Joint => 1,
            Phase::Done => 2,
        }
    }

    fn from_code(c: u64) -> Option<Phase> {
        [Phase::Pretrain, Phase::Joint, Phase::Done].into_iter().find(|p| p.code() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Joint => "joint",
            Phase::Done => "done",
        }
    }
}

/// Loss values of one completed iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub parts: LossParts,
    /// Weighted generator objective, before batch scaling.
    pub total: f64,
}

pub const METRICS_HEADER: [&str; 7] = ["iter", "l_p", "l_c", "l_g", "l_m", "l_h", "total"];

impl StepRecord {
    pub fn csv_row(&self) -> [String; 7] {
        let p = &self.parts;
        [
            self.iteration.to_string(),
            crate::analysis::sig9(p.pose),
            crate::analysis::sig9(p.correspondence),
            crate::analysis::sig9(p.view),
            crate::analysis::sig9(p.mapper),
            crate::analysis::sig9(p.discriminator),
            crate::analysis::sig9(self.total),
        ]
    }
}

fn images(items: &[&BatchItem], target: bool) -> Vec<f32> {
    items.iter().flat_map(|it| if target { it.target.data() } else { it.input.data() }).copied().collect()
}

fn pose_targets(items: &[&BatchItem], scale_mm: f64) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for it in items {
        let pose = it.pose.as_ref().ok_or_else(|| Error::InvalidArgument(format!("sample {} has no readable pose", it.id)))?;
        out.extend(pose.flat().iter().map(|&v| (v / scale_mm) as f32));
    }
    Ok(out)
}

fn finite_or_diverged(v: f64, iteration: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { iteration, detail: format!("{what} is {v}") })
    }
}

/// Row layout of the encoder input for one joint iteration: synthetic rows
/// first, then real rows.
struct Rows<'b> {
    items: Vec<&'b BatchItem>,
    domains: Vec<Domain>,
    n_syn: usize,
    k: usize,
    /// Rows `0..labeled` carry pose labels.
    labeled: usize,
}

impl<'b> Rows<'b> {
    fn new(b: &'b BatchComposition, t: ActiveTerms) -> Self {
        let k = b.corresponding.len();
        let mut items: Vec<&BatchItem> = Vec::new();
        if t.synthetic {
            items.extend(b.corresponding.iter().map(|(s, _)| s));
            items.extend(&b.synthetic);
        }
        let n_syn = items.len();
        items.extend(b.corresponding.iter().map(|(_, r)| r));
        items.extend(&b.real);
        let labeled = items.len();
        if t.unlabeled {
            items.extend(&b.unlabeled);
        }
        let domains = items.iter().map(|it| it.domain).collect();
        Rows { items, domains, n_syn, k, labeled }
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

/// Mutable training state of one run.
pub struct Trainer<'d> {
    pub config: RunConfig,
    data: &'d Dataset,
    guard: LabelGuard,
    model: Model,
    store: ParamStore<f32>,
    gen: Adam<f32>,
    disc: Adam<f32>,
    phase: Phase,
    iteration: usize,
    spec: BatchSpec,
    iters_per_epoch: usize,
    check_isolation: bool,
}

impl<'d> Trainer<'d> {
    /// Fresh networks initialized from the run seed.
    pub fn new(config: RunConfig, data: &'d Dataset) -> Result<Self> {
        config.validate()?;
        if config.net.resolution != data.resolution() || config.net.joints != data.joints() {
            return Err(Error::Config(format!(
                "network expects {}px inputs and {} joints, dataset has {}px and {}",
                config.net.resolution,
                config.net.joints,
                data.resolution(),
                data.joints()
            )));
        }
        let (model, store) = Model::init::<f32>(config.net.clone(), config.seed)?;
        let spec = BatchSpec::new(config.optim.batch, config.augment)?;
        let guard = LabelGuard::new(config.labeled_count(data));
        let terms = config.variant.terms();
        let phase = if terms.pretrain && config.pretrain_iters > 0 {
            Phase::Pretrain
        } else if terms.joint {
            Phase::Joint
        } else {
            Phase::Done
        };
        Ok(Trainer {
            gen: Adam::new(&config.optim),
            disc: Adam::new(&config.optim),
            iters_per_epoch: iterations_per_epoch(data, config.optim.batch),
            config,
            data,
            guard,
            model,
            store,
            phase,
            iteration: 0,
            spec,
            check_isolation: false,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    ///
    /// A checkpoint taken at the end of pretraining can seed a run of any
    /// variant that pretrains.
    pub fn from_checkpoint(config: RunConfig, data: &'d Dataset, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(config, data)?;
        ckpt.load_into(&mut t.store)?;
        let counter = |name: &str| ckpt.counter(name).ok_or_else(|| Error::format("checkpoint", format!("missing counter {name}")));
        let phase = Phase::from_code(counter("phase")?).ok_or_else(|| Error::format("checkpoint", "unknown phase"))?;
        let iteration = counter("iteration")? as usize;
        let opt_entries: Vec<_> = ckpt.entries.iter().filter(|e| matches!(e.kind, EntryKind::AdamM | EntryKind::AdamV)).cloned().collect();
        t.gen.import(&t.store, &opt_entries, &[Net::F, Net::M, Net::P, Net::G], counter("adam_steps_gen")?)?;
        t.disc.import(&t.store, &opt_entries, &[Net::H], counter("adam_steps_disc")?)?;
        t.phase = phase;
        t.iteration = iteration;
        t.normalize_phase();
        Ok(t)
    }

    /// Advances past finished or inapplicable phases.
    fn normalize_phase(&mut self) {
        let terms = self.config.variant.terms();
        if self.phase == Phase::Pretrain && (!terms.pretrain || self.iteration >= self.config.pretrain_iters) {
            self.phase = Phase::Joint;
            self.iteration = 0;
            self.gen = Adam::new(&self.config.optim);
        }
        if self.phase == Phase::Joint && (!terms.joint || self.iteration >= self.config.joint_iters) {
            self.phase = Phase::Done;
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_store(&self.store);
        c.entries.extend(self.gen.export(&self.store));
        c.entries.extend(self.disc.export(&self.store));
        c.counters.insert("phase".into(), self.phase.code());
        c.counters.insert("iteration".into(), self.iteration as u64);
        c.counters.insert("adam_steps_gen".into(), self.gen.steps());
        c.counters.insert("adam_steps_disc".into(), self.disc.steps());
        c.counters.insert("seed".into(), self.config.seed);
        c
    }

    /// Verify after every joint step, by parameter hashes, that the
    /// discriminator step touched only `h` and the generator step everything but `h`.
    pub fn set_isolation_checks(&mut self, on: bool) {
        self.check_isolation = on;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Completed iterations of the current phase.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn guard(&self) -> &LabelGuard {
        &self.guard
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.iters_per_epoch
    }

    fn lr(&self) -> f64 {
        ScheduleState::at(&self.config.optim, self.iteration, self.iters_per_epoch).lr
    }

    /// Runs one iteration of the current phase. On error the state is unchanged.
    pub fn step(&mut self) -> Result<StepRecord> {
        let rec = match self.phase {
            Phase::Pretrain => self.pretrain_step()?,
            Phase::Joint => self.joint_step()?,
            Phase::Done => return Err(Error::InvalidArgument("training is already finished".into())),
        };
        self.iteration += 1;
        self.normalize_phase();
        Ok(rec)
    }

    /// Steps until the run is finished, handing every record to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepRecord) -> Result<()>) -> Result<()> {
        while self.phase != Phase::Done {
            let rec = self.step()?;
            on_step(self, &rec)?;
        }
        Ok(())
    }

    /// Steps until the pretraining phase is over.
    pub fn run_pretrain(&mut self, mut on_step: impl FnMut(&Self, &StepRecord) -> Result<()>) -> Result<()> {
        while self.phase == Phase::Pretrain {
            let rec = self.step()?;
            on_step(self, &rec)?;
        }
        Ok(())
    }

    fn pretrain_step(&mut self) -> Result<StepRecord> {
        let it = self.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.config.seed, "pretrain", it as u64));
        let batch = synthetic_batch(self.data, &self.guard, self.spec.batch(), &self.spec.augment, &mut rng)?;
        let items: Vec<&BatchItem> = batch.iter().collect();
        let scale_mm = self.data.pose_scale_mm();
        let lr = self.lr();

        let mut ctx = Ctx::new(&self.store, &[Net::F, Net::P], Mode::Train);
        let x = self.model.images(&mut ctx, &images(&items, false), items.len())?;
        let domains = vec![Domain::Synthetic; items.len()];
        let z = self.model.latents(&mut ctx, x, &domains, None)?;
        let y = self.model.pose(&mut ctx, z, None)?;
        let target = ctx.input(pose_targets(&items, scale_mm)?, &ctx.g.shape(y).to_vec())?;
        let lp = pose_loss(&mut ctx.g, y, target)?;
        let terms = Terms { pose: Some(lp), correspondence: None, view: None, mapper: None };
        let loss = composite_loss(&mut ctx.g, &terms, &self.config.weights, batch_scale(self.spec.batch()))?;
        let pose = finite_or_diverged(Real::to_f64(ctx.g.scalar(lp)), it, "pose loss")?;
        ctx.g.backward(loss)?;
        let grads = ctx.grads();
        drop(ctx);
        self.gen.step(&mut self.store, &grads, lr)?;
        let parts = LossParts { pose, ..Default::default() };
        Ok(StepRecord { phase: Phase::Pretrain, iteration: it, parts, total: parts.composite(&self.config.weights) })
    }

    fn joint_step(&mut self) -> Result<StepRecord> {
        let it = self.iteration;
        let terms = self.config.variant.terms();
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.config.seed, "joint", it as u64));
        let batch = compose_batch(self.data, &self.guard, &self.spec, &mut rng)?;
        let rows = Rows::new(&batch, terms);
        let scale_mm = self.data.pose_scale_mm();
        let lr = self.lr();
        let weights = self.config.weights;

        let mut next = self.store.clone();
        let mut disc = self.disc.clone();
        let mut trainable = vec![Net::F, Net::M, Net::G];
        if !self.config.freeze_pose {
            trainable.push(Net::P);
        }
        let mut parts = LossParts::default();

        let mut ctx = Ctx::new(&self.store, &trainable, Mode::Train);
        let x = self.model.images(&mut ctx, &images(&rows.items, false), rows.len())?;
        let z = self.model.latents(&mut ctx, x, &rows.domains, None)?;

        let z_lab = if rows.labeled == rows.len() { z } else { ctx.g.slice_rows(z, 0, rows.labeled)? };
        let y = self.model.pose(&mut ctx, z_lab, None)?;
        let target = ctx.input(pose_targets(&rows.items[..rows.labeled], scale_mm)?, &ctx.g.shape(y).to_vec())?;
        let lp = pose_loss(&mut ctx.g, y, target)?;
        let mut t = Terms { pose: Some(lp), correspondence: None, view: None, mapper: None };

        if terms.correspondence && terms.synthetic {
            let zs = ctx.g.slice_rows(z, 0, rows.k)?;
            let zr = ctx.g.slice_rows(z, rows.n_syn, rows.k)?;
            t.correspondence = Some(correspondence_loss(&mut ctx.g, zr, zs, !self.config.correspondence_into_synthetic)?);
        }
        if terms.view {
            let v = self.model.view(&mut ctx, z, None)?;
            let target = ctx.input(images(&rows.items, true), &ctx.g.shape(v).to_vec())?;
            t.view = Some(view_loss(&mut ctx.g, v, target)?);
        }
        if terms.adversarial {
            let n_real = rows.len() - rows.n_syn;
            let z_real = ctx.g.slice_rows(z, rows.n_syn, n_real)?;
            let z_syn = ctx.g.slice_rows(z, 0, rows.n_syn)?;
            let d = self.config.net.latent;
            let (real_vals, syn_vals) = (ctx.g.value(z_real).to_vec(), ctx.g.value(z_syn).to_vec());

            // discriminator step on detached latents, before the generator update
            let mut dctx = Ctx::new(&self.store, &[Net::H], Mode::Train);
            let zr = dctx.input(real_vals, &[n_real, d])?;
            let zs = dctx.input(syn_vals, &[rows.n_syn, d])?;
            let sr = self.model.discriminate(&mut dctx, zr)?;
            let ss = self.model.discriminate(&mut dctx, zs)?;
            let lh = discriminator_loss(&mut dctx.g, Some(sr), Some(ss))?;
            parts.discriminator = finite_or_diverged(Real::to_f64(dctx.g.scalar(lh)), it, "discriminator loss")?;
            dctx.g.backward(lh)?;
            let dgrads = dctx.grads();
            drop(dctx);
            disc.step(&mut next, &dgrads, lr)?;
            if self.check_isolation {
                for net in [Net::F, Net::M, Net::P, Net::G] {
                    if next.fingerprint(net) != self.store.fingerprint(net) {
                        return Err(Error::InvalidArgument(format!("discriminator step changed {net}")));
                    }
                }
            }

            ctx.bind(Net::H, &next)?;
            let s = self.model.discriminate(&mut ctx, z_real)?;
            t.mapper = Some(mapper_adversarial_loss(&mut ctx.g, s)?);
        }

        let value = |ctx: &Ctx<'_, f32>, v: Option<Var>| v.map_or(0.0, |v| Real::to_f64(ctx.g.scalar(v)));
        parts.pose = value(&ctx, t.pose);
        parts.correspondence = value(&ctx, t.correspondence);
        parts.view = value(&ctx, t.view);
        parts.mapper = value(&ctx, t.mapper);
        let total = parts.composite(&weights);
        finite_or_diverged(total, it, "generator objective")?;

        let loss = composite_loss(&mut ctx.g, &t, &weights, batch_scale(self.spec.batch()))?;
        ctx.g.backward(loss)?;
        let grads = ctx.grads();
        let norm = ctx.take_norm_updates();
        drop(ctx);
        let h_before = if self.check_isolation { Some(next.fingerprint(Net::H)) } else { None };
        let mut gen = self.gen.clone();
        gen.step(&mut next, &grads, lr)?;
        if h_before.is_some_and(|h| h != next.fingerprint(Net::H)) {
            return Err(Error::InvalidArgument("generator step changed h".into()));
        }
        apply_norm_updates(&mut next, &norm, self.config.net.bn_momentum);

        self.store = next;
        self.gen = gen;
        self.disc = disc;
        Ok(StepRecord { phase: Phase::Joint, iteration: it, parts, total })
    }
}

/// Final numbers of one ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub n_labeled: Option<usize>,
    pub seed: u64,
    /// Real-domain mean joint error on the held-out test ids (mm).
    pub mean_error: f64,
    /// Median corresponding-pair latent distance on the validation ids.
    pub latent_median: f64,
}

pub const ABLATION_HEADER: [&str; 5] = ["variant", "n_labeled", "seed", "mean_error_mm", "latent_median"];

impl AblationRow {
    pub fn csv_row(&self) -> [String; 5] {
        [
            self.variant.name().to_string(),
            crate::config::format_n_labeled(self.n_labeled),
            self.seed.to_string(),
            crate::analysis::sig9(self.mean_error),
            crate::analysis::sig9(self.latent_median),
        ]
    }
}

/// Runs every `(seed, n, variant)` cell.
///
/// Pretraining does not depend on the variant or on `n`, so it runs once per
/// seed and every pretraining variant continues from that checkpoint.
/// `on_cell` sees each finished trainer, e.g. to save its checkpoint.
pub fn run_ablation_suite(
    base: &RunConfig,
    data: &Dataset,
    variants: &[Variant],
    n_grid: &[Option<usize>],
    seeds: &[u64],
    mut on_cell: impl FnMut(&AblationRow, &Trainer<'_>) -> Result<()>,
) -> Result<Vec<AblationRow>> {
    let test = crate::analysis::held_out_test_ids(data);
    let validation = data.validation_ids();
    let mut rows = Vec::new();
    for &seed in seeds {
        // any variant with both phases; its checkpoint stops at the start of joint training
        let mut pre = Trainer::new(RunConfig { seed, variant: Variant::Full, ..base.clone() }, data)?;
        pre.run_pretrain(|_, _| Ok(()))?;
        let pretrained = pre.checkpoint();
        for &n_labeled in n_grid {
            for &variant in variants {
                let cfg = RunConfig { seed, variant, n_labeled, ..base.clone() };
                let mut t = if variant.terms().pretrain {
                    Trainer::from_checkpoint(cfg, data, &pretrained)?
                } else {
                    Trainer::new(cfg, data)?
                };
                t.run(|_, _| Ok(()))?;
                let report = crate::analysis::evaluate(t.model(), t.store(), data, &test, Domain::Real)?;
                let distances = crate::analysis::latent_distances(t.model(), t.store(), data, &validation)?;
                let row = AblationRow {
                    variant,
                    n_labeled,
                    seed,
                    mean_error: report.mean_error,
                    latent_median: crate::analysis::median(&distances),
                };
                on_cell(&row, &t)?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}
