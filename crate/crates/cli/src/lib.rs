//! The `latentmap` command: dataset generation, training, evaluation,
//! latent-space analysis and the ablation grid.
//!
//! Settings come from, lowest precedence first: built-in defaults, the
//! `--config` file, `LATENTMAP_*` environment variables, command-line flags.
//! Every run writes `manifest.txt`, the fully resolved settings plus the
//! dataset hash, which can be passed back as `--config`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use latentmap::analysis::{self, DistanceDistribution};
use latentmap::config::{self, Settings};
use latentmap::datapipe::{Dataset, Domain};
use latentmap::nets::Checkpoint;
use latentmap::toyhand::generate_dataset;
use latentmap::trainer::{self, Trainer, Variant, ABLATION_HEADER, METRICS_HEADER};
use latentmap::ErrorKind;

/// A failure with its exit-code category.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Config, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Data, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    /// Single line for standard error: `error kind=<kind> code=<n> message=<quoted>`.
    pub fn machine_line(&self) -> String {
        let kind = match self.kind {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        };
        format!("error kind={kind} code={} message={:?}", self.exit_code(), self.message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<latentmap::Error> for CliError {
    fn from(e: latentmap::Error) -> Self {
        CliError { kind: e.kind(), message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

fn key_help() -> String {
    let mut s = String::from("Configuration keys (file `key = value`, or env ");
    s.push_str(config::ENV_PREFIX);
    s.push_str("KEY_NAME):\n");
    for (k, help) in config::keys() {
        s.push_str(&format!("  {k:<32} {help}\n"));
    }
    s
}

#[derive(Debug, Parser)]
#[command(name = "latentmap", version, about = "Semi-supervised latent feature mapping on a toy depth-image hand scene")]
#[command(after_long_help = key_help())]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Settings document (`key = value` per line).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; for `gen`, the generator seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (`gen`, `eval`) or directory (other commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset container to read.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Labeled real training samples, or `all`.
    #[arg(long = "n-labeled", global = true)]
    pub n_labeled: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a toy dataset container.
    Gen {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Synthetic pretraining only; writes `pretrain.ckpt`.
    Pretrain,
    /// Train one variant; writes `final.ckpt`, `metrics.csv`, `manifest.txt`.
    Train {
        /// Continue from this checkpoint, e.g. a `pretrain.ckpt`.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Mean joint error of a checkpoint on the held-out test ids.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `real` or `synthetic`.
        #[arg(long, default_value = "real")]
        domain: String,
    },
    /// Latent distances, embeddings and nearest-neighbor report of a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frames in the nearest-neighbor report.
        #[arg(long, default_value_t = 10)]
        worst: usize,
        /// Neighbors per frame.
        #[arg(long, default_value_t = 5)]
        neighbors: usize,
    },
    /// Every ablation variant for every labeled budget and seed.
    Ablate {
        /// Comma-separated labeled budgets; `all` for every training sample.
        #[arg(long = "n-grid", default_value = "10,100,all")]
        n_grid: String,
        /// Number of seeds, counting up from the run seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

/// Defaults, then file, then environment, then flags.
pub fn resolve(common: &Common, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        s.apply_text(&text)?;
    }
    s.apply_env(env)?;
    if let Some(v) = &common.variant {
        s.set("variant", v)?;
    }
    if let Some(v) = &common.n_labeled {
        s.set("n_labeled", v)?;
    }
    if let Some(seed) = common.seed {
        s.run.seed = seed;
        s.gen.seed = seed;
    }
    if let Some(d) = &common.dataset {
        s.run.dataset = d.clone();
    }
    if let Some(o) = &common.out {
        s.run.out_dir = o.clone();
    }
    s.run.validate()?;
    Ok(s)
}

fn load_dataset(s: &mut Settings) -> CliResult<Dataset> {
    let data = Dataset::read(&s.run.dataset)?;
    let hash = data.content_hash();
    match &s.dataset_hash {
        Some(expected) if *expected != hash => {
            return Err(CliError::data(format!("dataset hash {hash} does not match configured {expected}")));
        }
        _ => s.dataset_hash = Some(hash),
    }
    Ok(data)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_manifest(dir: &Path, s: &Settings) -> CliResult<()> {
    write_file(&dir.join("manifest.txt"), s.to_text().as_bytes())
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn csv_row<const N: usize>(w: &mut csv::Writer<fs::File>, row: [String; N]) -> CliResult<()> {
    w.write_record(row).map_err(|e| CliError::data(e.to_string()))
}

/// Runs a trainer to completion, writing metrics and periodic checkpoints into `dir`.
fn drive(t: &mut Trainer<'_>, dir: &Path, stop_after_pretrain: bool) -> CliResult<()> {
    let mut metrics = csv_writer(&dir.join("metrics.csv"))?;
    let mut header = vec!["phase"];
    header.extend(METRICS_HEADER);
    metrics.write_record(&header).map_err(|e| CliError::data(e.to_string()))?;
    let every = t.config.checkpoint_every;
    let mut failure = None;
    let mut on_step = |t: &Trainer<'_>, r: &trainer::StepRecord| -> latentmap::Result<()> {
        let mut row = vec![r.phase.name().to_string()];
        row.extend(r.csv_row());
        if let Err(e) = metrics.write_record(&row) {
            failure = Some(CliError::data(e.to_string()));
        }
        if every > 0 && (r.iteration + 1) % every == 0 {
            let path = dir.join(format!("{}-{:06}.ckpt", r.phase.name(), r.iteration + 1));
            t.checkpoint().write(&path)?;
        }
        Ok(())
    };
    if stop_after_pretrain {
        t.run_pretrain(&mut on_step)?;
    } else {
        t.run(&mut on_step)?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    metrics.flush().map_err(|e| CliError::data(e.to_string()))
}

fn parse_domain(s: &str) -> CliResult<Domain> {
    match s {
        "real" => Ok(Domain::Real),
        "synthetic" => Ok(Domain::Synthetic),
        _ => Err(CliError::config(format!("domain must be real or synthetic, got {s:?}"))),
    }
}

fn restore<'d>(s: &Settings, data: &'d Dataset, path: &Path) -> CliResult<Trainer<'d>> {
    let ck = Checkpoint::read(path)?;
    Ok(Trainer::from_checkpoint(s.run.clone(), data, &ck)?)
}

pub fn parse_n_grid(text: &str) -> CliResult<Vec<Option<usize>>> {
    text.split(',')
        .map(|v| match v.trim() {
            "all" => Ok(None),
            v => v.parse().map(Some).map_err(|_| CliError::config(format!("bad --n-grid entry {v:?}"))),
        })
        .collect()
}

/// Executes a parsed command line; `out` receives the human-readable summary.
pub fn execute(cli: &Cli, env: impl IntoIterator<Item = (String, String)>, out: &mut dyn Write) -> CliResult<()> {
    let mut s = resolve(&cli.common, env)?;
    let say = |out: &mut dyn Write, msg: String| {
        let _ = writeln!(out, "{msg}");
    };
    match &cli.command {
        Command::Gen { count } => {
            if let Some(c) = count {
                s.gen.count = *c;
            }
            let path = cli.common.out.clone().unwrap_or_else(|| s.run.dataset.clone());
            let data = generate_dataset(&s.gen.to_gen_config()?)?;
            data.write(&path)?;
            say(out, format!("wrote {} samples to {} (sha256 {})", data.len(), path.display(), data.content_hash()));
        }
        Command::Pretrain => {
            let data = load_dataset(&mut s)?;
            let dir = s.run.out_dir.clone();
            create_dir(&dir)?;
            let mut t = Trainer::new(s.run.clone(), &data)?;
            drive(&mut t, &dir, true)?;
            t.checkpoint().write(&dir.join("pretrain.ckpt"))?;
            write_manifest(&dir, &s)?;
            say(out, format!("pretrained {} iterations into {}", s.run.pretrain_iters, dir.display()));
        }
        Command::Train { init } => {
            let data = load_dataset(&mut s)?;
            let dir = s.run.out_dir.clone();
            create_dir(&dir)?;
            let mut t = match init {
                Some(p) => restore(&s, &data, p)?,
                None => Trainer::new(s.run.clone(), &data)?,
            };
            write_manifest(&dir, &s)?;
            drive(&mut t, &dir, false)?;
            t.checkpoint().write(&dir.join("final.ckpt"))?;
            let test = analysis::held_out_test_ids(&data);
            let report = analysis::evaluate(t.model(), t.store(), &data, &test, Domain::Real)?;
            say(out, format!("variant {} n_labeled {}: real test ME {:.3} mm", s.run.variant, config::format_n_labeled(s.run.n_labeled), report.mean_error));
        }
        Command::Eval { checkpoint, domain } => {
            let data = load_dataset(&mut s)?;
            let t = restore(&s, &data, checkpoint)?;
            let test = analysis::held_out_test_ids(&data);
            let report = analysis::evaluate(t.model(), t.store(), &data, &test, parse_domain(domain)?)?;
            let path = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("eval.csv"));
            let f = fs::File::create(&path).map_err(io_err(&path))?;
            report.write_csv(f)?;
            say(out, format!("ME {} mm over {} frames", analysis::sig9(report.mean_error), report.frames));
        }
        Command::Analyze { checkpoint, worst, neighbors } => {
            let data = load_dataset(&mut s)?;
            let t = restore(&s, &data, checkpoint)?;
            let dir = s.run.out_dir.clone();
            create_dir(&dir)?;
            let val = data.validation_ids();
            let distances = analysis::latent_distances(t.model(), t.store(), &data, &val)?;
            let dist = DistanceDistribution::own_support(val.clone(), distances);
            let file = |name: &str| {
                let p = dir.join(name);
                fs::File::create(&p).map_err(io_err(&p))
            };
            dist.write_distances_csv(file("distances.csv")?)?;
            dist.write_histogram_csv(file("histogram.csv")?)?;
            analysis::export_embeddings(t.model(), t.store(), &data, &val, file("embeddings.csv")?)?;

            let test = analysis::held_out_test_ids(&data);
            let report = analysis::evaluate(t.model(), t.store(), &data, &test, Domain::Real)?;
            let test_rows: Vec<_> = test
                .iter()
                .zip(&report.per_frame_mean)
                .map(|(&id, &e)| (id, e, data.record(id).pose_unguarded().clone()))
                .collect();
            let train_rows: Vec<_> = data.train_ids().into_iter().map(|id| (id, data.record(id).pose_unguarded().clone())).collect();
            let nn = analysis::nn_error_analysis(&test_rows, &train_rows, *worst, *neighbors);
            analysis::write_nn_csv(&nn, file("nn.csv")?)?;
            say(out, format!("median latent distance {} over {} validation pairs", analysis::sig9(dist.median), val.len()));
        }
        Command::Ablate { n_grid, seeds } => {
            let grid = parse_n_grid(n_grid)?;
            if *seeds == 0 {
                return Err(CliError::config("--seeds must be positive"));
            }
            let data = load_dataset(&mut s)?;
            let dir = s.run.out_dir.clone();
            create_dir(&dir)?;
            write_manifest(&dir, &s)?;
            let seed_list: Vec<u64> = (0..*seeds).map(|i| s.run.seed + i).collect();
            let rows = trainer::run_ablation_suite(&s.run, &data, &Variant::ABLATION, &grid, &seed_list, |row, t| {
                let name = format!("{}-n{}-s{}.ckpt", row.variant, config::format_n_labeled(row.n_labeled), row.seed);
                t.checkpoint().write(&dir.join(name))
            })?;
            let mut w = csv_writer(&dir.join("ablation.csv"))?;
            csv_row(&mut w, ABLATION_HEADER.map(String::from))?;
            for r in &rows {
                csv_row(&mut w, r.csv_row())?;
            }
            w.flush().map_err(|e| CliError::data(e.to_string()))?;
            say(out, format!("{} runs written to {}", rows.len(), dir.join("ablation.csv").display()));
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with(args: Vec<String>, env: Vec<(String, String)>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let c = CliError::config(e.to_string().lines().next().unwrap_or("bad arguments").to_string());
            let _ = writeln!(err, "{}", c.machine_line());
            return c.exit_code();
        }
    };
    match execute(&cli, env, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.machine_line());
            e.exit_code()
        }
    }
}

