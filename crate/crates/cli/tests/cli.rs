use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use latentmap::config;
use proptest::prelude::*;

const TINY: &str = "\
pretrain_iters = 2
joint_iters = 2
optim.batch = 8
net.latent = 6
net.stem = 2
net.stages = 3,4
net.pose_hidden = 8
net.decoder_widths = 3,2
";

fn latentmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentmap"))
        .current_dir(dir)
        .args(args)
        .env_remove("LATENTMAP_SEED")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn setup(dir: &Path) {
    fs::write(dir.join("tiny.cfg"), TINY).unwrap();
    ok(&latentmap(dir, &["gen", "--seed", "7", "--count", "48", "--out", "data.mrds"]));
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&latentmap(d, &["gen", "--seed", "7", "--count", "30", "--out", "a.mrds"]));
    ok(&latentmap(d, &["gen", "--seed", "7", "--count", "30", "--out", "b.mrds"]));
    ok(&latentmap(d, &["gen", "--seed", "8", "--count", "30", "--out", "c.mrds"]));
    let a = fs::read(d.join("a.mrds")).unwrap();
    assert_eq!(a, fs::read(d.join("b.mrds")).unwrap());
    assert_ne!(a, fs::read(d.join("c.mrds")).unwrap());
}

#[test]
fn train_records_its_settings_and_replays_from_them() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let args = ["--config", "tiny.cfg", "--dataset", "data.mrds", "train", "--variant", "full", "--n-labeled", "10", "--out", "run1"];
    ok(&latentmap(d, &args));
    let manifest = fs::read_to_string(d.join("run1/manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "variant = full"));
    assert!(manifest.lines().any(|l| l == "n_labeled = 10"));
    assert!(manifest.lines().any(|l| l.starts_with("dataset_hash = ") && l.len() == "dataset_hash = ".len() + 64));
    assert_eq!(manifest.lines().count(), config::keys().count());
    let metrics = fs::read_to_string(d.join("run1/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("phase,iter,l_p,l_c,l_g,l_m,l_h,total"));
    assert_eq!(metrics.lines().count(), 1 + 2 + 2);

    // the manifest alone reproduces the run
    ok(&latentmap(d, &["--config", "run1/manifest.txt", "train", "--out", "run2"]));
    assert_eq!(fs::read(d.join("run1/final.ckpt")).unwrap(), fs::read(d.join("run2/final.ckpt")).unwrap());
    assert_eq!(metrics, fs::read_to_string(d.join("run2/metrics.csv")).unwrap());

    ok(&latentmap(d, &["--config", "run1/manifest.txt", "eval", "--checkpoint", "run1/final.ckpt", "--out", "eval.csv"]));
    assert!(fs::read_to_string(d.join("eval.csv")).unwrap().starts_with("frame,mean_error_mm,max_error_mm"));
    ok(&latentmap(d, &["--config", "run1/manifest.txt", "analyze", "--checkpoint", "run1/final.ckpt", "--out", "an"]));
    for f in ["distances.csv", "histogram.csv", "embeddings.csv", "nn.csv"] {
        assert!(d.join("an").join(f).exists(), "{f}");
    }
}

#[test]
fn pretrain_then_train_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(&latentmap(d, &["--config", "tiny.cfg", "--dataset", "data.mrds", "pretrain", "--out", "pre"]));
    ok(&latentmap(d, &["--config", "tiny.cfg", "--dataset", "data.mrds", "train", "--out", "direct"]));
    ok(&latentmap(d, &["--config", "tiny.cfg", "--dataset", "data.mrds", "train", "--init", "pre/pretrain.ckpt", "--out", "resumed"]));
    assert_eq!(fs::read(d.join("direct/final.ckpt")).unwrap(), fs::read(d.join("resumed/final.ckpt")).unwrap());
}

#[test]
fn ablate_writes_the_whole_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    fs::write(d.join("tiny.cfg"), TINY.replace("pretrain_iters = 2", "pretrain_iters = 1").replace("joint_iters = 2", "joint_iters = 1")).unwrap();
    let o = latentmap(d, &["--config", "tiny.cfg", "--dataset", "data.mrds", "ablate", "--n-grid", "10,100,all", "--seeds", "3", "--out", "abl"]);
    ok(&o);
    let table = fs::read_to_string(d.join("abl/ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,n_labeled,seed,mean_error_mm,latent_median");
    assert_eq!(lines.len(), 1 + 36);
    for v in ["baseline", "view-pred", "distr-match", "full"] {
        assert_eq!(lines.iter().filter(|l| l.starts_with(&format!("{v},"))).count(), 9);
    }
    assert!(d.join("abl/full-nall-s2.ckpt").exists());
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let missing = latentmap(d, &["--dataset", "nope.mrds", "--config", "tiny.cfg", "train"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error kind=data code=2 message="));

    let bad_flag = latentmap(d, &["train", "--no-such-flag"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    let bad_variant = latentmap(d, &["train", "--variant", "best"]);
    assert_eq!(bad_variant.status.code(), Some(1));

    fs::write(d.join("hot.cfg"), format!("{TINY}optim.alpha0 = 1e36\n")).unwrap();
    let diverged = latentmap(d, &["--config", "hot.cfg", "--dataset", "data.mrds", "train", "--out", "hot"]);
    assert_eq!(diverged.status.code(), Some(3), "{}", String::from_utf8_lossy(&diverged.stderr));
    assert!(String::from_utf8_lossy(&diverged.stderr).starts_with("error kind=numerical code=3"));

    let env = Command::new(env!("CARGO_BIN_EXE_latentmap"))
        .current_dir(d)
        .args(["--config", "tiny.cfg", "train"])
        .env("LATENTMAP_BOGUS", "1")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(1));
}

#[test]
fn help_lists_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = latentmap(dir.path(), &["--help"]);
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    for (k, _) in config::keys() {
        assert!(text.contains(k), "{k}");
    }
    assert!(text.contains(config::ENV_PREFIX));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn unknown_config_keys_exit_with_one(key in "[a-z][a-z_.]{0,15}", value in "[a-z0-9.]{0,5}") {
        prop_assume!(config::keys().all(|(k, _)| k != key));
        let mut out = Vec::new();
        let mut err = Vec::new();
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.cfg");
        fs::write(&cfg, format!("{key} = {value}\n")).unwrap();
        let args = ["latentmap", "--config", cfg.to_str().unwrap(), "gen"].map(String::from).to_vec();
        let code = latentmap_cli::main_with(args, Vec::new(), &mut out, &mut err);
        prop_assert_eq!(code, 1);
        prop_assert!(String::from_utf8(err).unwrap().starts_with("error kind=config code=1"));
    }
}
