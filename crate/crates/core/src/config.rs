//! Flat `key = value` configuration covering data generation and training.
//!
//! ```text
//! # comments and blank lines are ignored
//! variant = full
//! n_labeled = 10
//! optim.batch = 64
//! net.stages = 16,32,64,64
//! ```
//!
//! Unknown or repeated keys are errors. Every key can also be set from the
//! environment as `LATENTMAP_` followed by the key upper-cased with dots turned
//! into underscores, e.g. `LATENTMAP_OPTIM_BATCH=32`. Precedence, lowest first:
//! defaults, file, environment, command-line flags.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::toyhand::{default_views, CorruptionParams, GenConfig, HandSampler};
use crate::trainer::{RunConfig, Variant};

pub const ENV_PREFIX: &str = "LATENTMAP_";

/// Dataset generation settings in flat form.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSettings {
    pub count: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub resolution: usize,
    pub mm_per_pixel: f64,
    pub depth_range_mm: f64,
    pub noise_mm: f64,
    pub quantization_mm: f64,
    pub dropout: f64,
    pub erosion: usize,
    pub hand: HandSampler,
}

impl Default for GenSettings {
    fn default() -> Self {
        let d = GenConfig::desk(2500, 0);
        GenSettings {
            count: d.count,
            seed: d.seed,
            train_fraction: d.train_fraction,
            validation_fraction: d.validation_fraction,
            resolution: d.resolution,
            mm_per_pixel: d.views[0].mm_per_pixel,
            depth_range_mm: d.views[0].depth_range_mm,
            noise_mm: d.corruption.noise_sigma_mm(),
            quantization_mm: d.corruption.quantization_mm(),
            dropout: d.corruption.dropout(),
            erosion: d.corruption.erosion_radius(),
            hand: d.hand,
        }
    }
}

impl GenSettings {
    pub fn to_gen_config(&self) -> Result<GenConfig> {
        let corruption = CorruptionParams::new(self.noise_mm, self.quantization_mm, self.dropout, self.erosion, self.seed)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(GenConfig {
            count: self.count,
            train_fraction: self.train_fraction,
            test_fraction: 1.0 - self.train_fraction,
            validation_fraction: self.validation_fraction,
            hand: self.hand.clone(),
            corruption,
            views: default_views(self.mm_per_pixel, self.depth_range_mm),
            resolution: self.resolution,
            seed: self.seed,
        })
    }
}

/// Every configurable value of the tool.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub run: RunConfig,
    pub gen: GenSettings,
    /// Content hash the dataset must have; recorded in run manifests.
    pub dataset_hash: Option<String>,
}

struct Key {
    name: &'static str,
    help: &'static str,
    get: fn(&Settings) -> String,
    set: fn(&mut Settings, &str) -> Result<()>,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.trim().parse().map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|s| parse(key, s)).collect()
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_n_labeled(v: &str) -> Result<Option<usize>> {
    if v.trim() == "all" {
        Ok(None)
    } else {
        parse("n_labeled", v).map(Some)
    }
}

pub fn format_n_labeled(n: Option<usize>) -> String {
    n.map_or_else(|| "all".to_string(), |n| n.to_string())
}

macro_rules! key {
    ($name:literal, $help:literal, |$s:ident| $get:expr, |$t:ident, $v:ident| $set:expr) => {
        Key {
            name: $name,
            help: $help,
            get: |$s: &Settings| $get,
            set: |$t: &mut Settings, $v: &str| {
                $set;
                Ok(())
            },
        }
    };
}

const KEYS: &[Key] = &[
    key!("variant", "baseline | view-pred | distr-match | full | real-only | synth-only",
        |s| s.run.variant.name().to_string(),
        |s, v| s.run.variant = Variant::from_name(v.trim()).ok_or_else(|| Error::Config(format!("unknown variant {v:?}")))?),
    key!("n_labeled", "labeled real training samples, or `all`",
        |s| format_n_labeled(s.run.n_labeled), |s, v| s.run.n_labeled = parse_n_labeled(v)?),
    key!("pretrain_iters", "synthetic pretraining iterations",
        |s| s.run.pretrain_iters.to_string(), |s, v| s.run.pretrain_iters = parse("pretrain_iters", v)?),
    key!("joint_iters", "joint training iterations",
        |s| s.run.joint_iters.to_string(), |s, v| s.run.joint_iters = parse("joint_iters", v)?),
    key!("seed", "run seed", |s| s.run.seed.to_string(), |s, v| s.run.seed = parse("seed", v)?),
    key!("checkpoint_every", "checkpoint cadence in iterations, 0 for none",
        |s| s.run.checkpoint_every.to_string(), |s, v| s.run.checkpoint_every = parse("checkpoint_every", v)?),
    key!("freeze_pose", "keep the pose head fixed during joint training",
        |s| s.run.freeze_pose.to_string(), |s, v| s.run.freeze_pose = parse_bool("freeze_pose", v)?),
    key!("correspondence_into_synthetic", "let the correspondence loss move synthetic latents too",
        |s| s.run.correspondence_into_synthetic.to_string(),
        |s, v| s.run.correspondence_into_synthetic = parse_bool("correspondence_into_synthetic", v)?),
    key!("dataset", "dataset container path", |s| s.run.dataset.display().to_string(), |s, v| s.run.dataset = PathBuf::from(v.trim())),
    key!("out_dir", "output directory", |s| s.run.out_dir.display().to_string(), |s, v| s.run.out_dir = PathBuf::from(v.trim())),
    key!("dataset_hash", "expected dataset content hash, empty for any",
        |s| s.dataset_hash.clone().unwrap_or_default(),
        |s, v| s.dataset_hash = Some(v.trim().to_string()).filter(|h| !h.is_empty())),
    key!("loss.lambda_c", "correspondence loss weight",
        |s| s.run.weights.correspondence.to_string(), |s, v| s.run.weights.correspondence = parse("loss.lambda_c", v)?),
    key!("loss.lambda_g", "view prediction loss weight",
        |s| s.run.weights.view.to_string(), |s, v| s.run.weights.view = parse("loss.lambda_g", v)?),
    key!("loss.lambda_m", "mapper adversarial loss weight",
        |s| s.run.weights.mapper.to_string(), |s, v| s.run.weights.mapper = parse("loss.lambda_m", v)?),
    key!("optim.alpha0", "base learning rate", |s| s.run.optim.alpha0.to_string(), |s, v| s.run.optim.alpha0 = parse("optim.alpha0", v)?),
    key!("optim.beta1", "Adam beta1", |s| s.run.optim.beta1.to_string(), |s, v| s.run.optim.beta1 = parse("optim.beta1", v)?),
    key!("optim.beta2", "Adam beta2", |s| s.run.optim.beta2.to_string(), |s, v| s.run.optim.beta2 = parse("optim.beta2", v)?),
    key!("optim.eps", "Adam epsilon", |s| s.run.optim.eps.to_string(), |s, v| s.run.optim.eps = parse("optim.eps", v)?),
    key!("optim.decay", "per-epoch exponential decay after warm-up",
        |s| s.run.optim.decay.to_string(), |s, v| s.run.optim.decay = parse("optim.decay", v)?),
    key!("optim.batch", "batch size, a multiple of 4", |s| s.run.optim.batch.to_string(), |s, v| s.run.optim.batch = parse("optim.batch", v)?),
    key!("augment.enabled", "online augmentation on or off",
        |s| s.run.augment.enabled.to_string(), |s, v| s.run.augment.enabled = parse_bool("augment.enabled", v)?),
    key!("augment.max_rotation_deg", "in-plane rotation range in degrees",
        |s| s.run.augment.max_rotation_deg.to_string(), |s, v| s.run.augment.max_rotation_deg = parse("augment.max_rotation_deg", v)?),
    key!("augment.offset_sigma_mm", "crop offset standard deviation (mm)",
        |s| s.run.augment.offset_sigma_mm.to_string(), |s, v| s.run.augment.offset_sigma_mm = parse("augment.offset_sigma_mm", v)?),
    key!("augment.noise_sigma_mm", "depth noise standard deviation (mm)",
        |s| s.run.augment.noise_sigma_mm.to_string(), |s, v| s.run.augment.noise_sigma_mm = parse("augment.noise_sigma_mm", v)?),
    key!("net.resolution", "input side length", |s| s.run.net.resolution.to_string(), |s, v| s.run.net.resolution = parse("net.resolution", v)?),
    key!("net.joints", "joint count", |s| s.run.net.joints.to_string(), |s, v| s.run.net.joints = parse("net.joints", v)?),
    key!("net.latent", "latent width D", |s| s.run.net.latent.to_string(), |s, v| s.run.net.latent = parse("net.latent", v)?),
    key!("net.stem", "encoder stem filters", |s| s.run.net.stem.to_string(), |s, v| s.run.net.stem = parse("net.stem", v)?),
    key!("net.stages", "encoder stage widths, comma separated",
        |s| list(&s.run.net.stages), |s, v| s.run.net.stages = parse_list("net.stages", v)?),
    key!("net.blocks_per_stage", "residual blocks per stage",
        |s| s.run.net.blocks_per_stage.to_string(), |s, v| s.run.net.blocks_per_stage = parse("net.blocks_per_stage", v)?),
    key!("net.pose_hidden", "pose head hidden width",
        |s| s.run.net.pose_hidden.to_string(), |s, v| s.run.net.pose_hidden = parse("net.pose_hidden", v)?),
    key!("net.decoder_widths", "decoder hidden channels, comma separated",
        |s| list(&s.run.net.decoder_widths), |s, v| s.run.net.decoder_widths = parse_list("net.decoder_widths", v)?),
    key!("net.bn_eps", "batch norm epsilon", |s| s.run.net.bn_eps.to_string(), |s, v| s.run.net.bn_eps = parse("net.bn_eps", v)?),
    key!("net.bn_momentum", "batch norm running-average momentum",
        |s| s.run.net.bn_momentum.to_string(), |s, v| s.run.net.bn_momentum = parse("net.bn_momentum", v)?),
    key!("net.leaky_slope", "decoder leaky ReLU slope",
        |s| s.run.net.leaky_slope.to_string(), |s, v| s.run.net.leaky_slope = parse("net.leaky_slope", v)?),
    key!("gen.count", "samples to generate", |s| s.gen.count.to_string(), |s, v| s.gen.count = parse("gen.count", v)?),
    key!("gen.seed", "generator seed", |s| s.gen.seed.to_string(), |s, v| s.gen.seed = parse("gen.seed", v)?),
    key!("gen.train_fraction", "fraction of ids in the training split",
        |s| s.gen.train_fraction.to_string(), |s, v| s.gen.train_fraction = parse("gen.train_fraction", v)?),
    key!("gen.validation_fraction", "fraction of test ids in the validation subset",
        |s| s.gen.validation_fraction.to_string(), |s, v| s.gen.validation_fraction = parse("gen.validation_fraction", v)?),
    key!("gen.resolution", "rendered crop side length", |s| s.gen.resolution.to_string(), |s, v| s.gen.resolution = parse("gen.resolution", v)?),
    key!("gen.mm_per_pixel", "crop scale (mm per pixel)",
        |s| s.gen.mm_per_pixel.to_string(), |s, v| s.gen.mm_per_pixel = parse("gen.mm_per_pixel", v)?),
    key!("gen.depth_range_mm", "depth range mapped onto [-1, 1] (mm)",
        |s| s.gen.depth_range_mm.to_string(), |s, v| s.gen.depth_range_mm = parse("gen.depth_range_mm", v)?),
    key!("gen.noise_mm", "real-domain depth noise (mm)", |s| s.gen.noise_mm.to_string(), |s, v| s.gen.noise_mm = parse("gen.noise_mm", v)?),
    key!("gen.quantization_mm", "real-domain depth quantization step (mm)",
        |s| s.gen.quantization_mm.to_string(), |s, v| s.gen.quantization_mm = parse("gen.quantization_mm", v)?),
    key!("gen.dropout", "real-domain pixel dropout probability", |s| s.gen.dropout.to_string(), |s, v| s.gen.dropout = parse("gen.dropout", v)?),
    key!("gen.erosion", "real-domain silhouette erosion radius (px)", |s| s.gen.erosion.to_string(), |s, v| s.gen.erosion = parse("gen.erosion", v)?),
    key!("hand.fingers", "fingers", |s| s.gen.hand.fingers.to_string(), |s, v| s.gen.hand.fingers = parse("hand.fingers", v)?),
    key!("hand.segments_per_finger", "segments per finger",
        |s| s.gen.hand.segments_per_finger.to_string(), |s, v| s.gen.hand.segments_per_finger = parse("hand.segments_per_finger", v)?),
    key!("hand.segment_lengths", "segment lengths (mm), comma separated",
        |s| list(&s.gen.hand.segment_lengths), |s, v| s.gen.hand.segment_lengths = parse_list("hand.segment_lengths", v)?),
    key!("hand.segment_radius", "segment capsule radius (mm)",
        |s| s.gen.hand.segment_radius.to_string(), |s, v| s.gen.hand.segment_radius = parse("hand.segment_radius", v)?),
    key!("hand.palm_radius", "palm sphere radius (mm)",
        |s| s.gen.hand.palm_radius.to_string(), |s, v| s.gen.hand.palm_radius = parse("hand.palm_radius", v)?),
    key!("hand.knuckle_offset", "palm center to knuckle distance (mm)",
        |s| s.gen.hand.knuckle_offset.to_string(), |s, v| s.gen.hand.knuckle_offset = parse("hand.knuckle_offset", v)?),
    key!("hand.finger_spread", "angle between neighboring fingers (rad)",
        |s| s.gen.hand.finger_spread.to_string(), |s, v| s.gen.hand.finger_spread = parse("hand.finger_spread", v)?),
    key!("hand.flex_min", "lower flexion limit (rad)",
        |s| s.gen.hand.flex_limits.0.to_string(), |s, v| s.gen.hand.flex_limits.0 = parse("hand.flex_min", v)?),
    key!("hand.flex_max", "upper flexion limit (rad)",
        |s| s.gen.hand.flex_limits.1.to_string(), |s, v| s.gen.hand.flex_limits.1 = parse("hand.flex_max", v)?),
    key!("hand.orientation_range", "roll,pitch,yaw half-ranges (rad)",
        |s| list(&s.gen.hand.orientation_range),
        |s, v| {
            let r: Vec<f64> = parse_list("hand.orientation_range", v)?;
            s.gen.hand.orientation_range =
                r.try_into().map_err(|_| Error::Config("hand.orientation_range needs three values".into()))?
        }),
    key!("hand.base_jitter_mm", "palm position jitter half-width (mm)",
        |s| s.gen.hand.base_jitter_mm.to_string(), |s, v| s.gen.hand.base_jitter_mm = parse("hand.base_jitter_mm", v)?),
];

/// Names and one-line descriptions of every key, in file order.
pub fn keys() -> impl Iterator<Item = (&'static str, &'static str)> {
    KEYS.iter().map(|k| (k.name, k.help))
}

/// Environment variable that overrides `key`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase().replace('.', "_"))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = KEYS.iter().find(|k| k.name == key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        (k.set)(self, value)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.iter().find(|k| k.name == key).map(|k| (k.get)(self))
    }

    /// Applies a `key = value` document on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key {k:?} repeated", i + 1)));
            }
            self.set(k, v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    /// Applies every `LATENTMAP_*` variable; unknown ones are errors.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (name, value) in vars {
            if !name.starts_with(ENV_PREFIX) {
                continue;
            }
            let key = KEYS
                .iter()
                .find(|k| env_name(k.name) == name)
                .ok_or_else(|| Error::Config(format!("unknown environment override {name}")))?;
            (key.set)(self, &value)?;
        }
        Ok(())
    }

    /// The complete resolved configuration as a document [`Settings::apply_text`] reads back.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{} = {}\n", k.name, (k.get)(self))).collect()
    }

    pub fn parse(text: &str) -> Result<Settings> {
        let mut s = Settings::default();
        s.apply_text(text)?;
        Ok(s)
    }
}
