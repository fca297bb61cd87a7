use latentmap::analysis::*;
use latentmap::datapipe::{Dataset, Domain};
use latentmap::image::DepthImage;
use latentmap::nets::{Checkpoint, Model, NetConfig};
use latentmap::pose::Pose;
use latentmap::toyhand::{generate_dataset, CorruptionParams, GenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pose(rng: &mut ChaCha8Rng, joints: usize) -> Pose {
    Pose::new((0..joints).map(|_| [0; 3].map(|_: i32| rng.random_range(-50.0..50.0))).collect())
}

fn small_net(joints: usize) -> NetConfig {
    NetConfig { latent: 5, stem: 2, stages: vec![3, 4], pose_hidden: 8, decoder_widths: vec![3, 2], ..NetConfig::desk(joints) }
}

fn data(corrupt: bool) -> Dataset {
    let mut g = GenConfig::desk(60, 2);
    if !corrupt {
        g.corruption = CorruptionParams::none();
    }
    generate_dataset(&g).unwrap()
}

#[test]
fn mean_error_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth: Vec<Pose> = (0..4).map(|_| random_pose(&mut rng, 7)).collect();
    assert_eq!(mean_joint_error(&truth, &truth).unwrap().mean_error, 0.0);

    let shifted: Vec<Pose> = truth.iter().map(|p| p.translated([5.0, 0.0, 0.0])).collect();
    let r = mean_joint_error(&shifted, &truth).unwrap();
    assert!((r.mean_error - 5.0).abs() < 1e-12);
    assert!(r.per_joint.iter().chain(&r.per_frame_max).all(|v| (v - 5.0).abs() < 1e-12));
    assert_eq!(r.frames, 4);

    let pred = vec![truth[0].translated([0.0, 4.0, 0.0]), truth[1].translated([0.0, 0.0, 6.0])];
    let r = mean_joint_error(&pred, &truth[..2]).unwrap();
    assert!((r.mean_error - 5.0).abs() < 1e-12);
    assert!(mean_joint_error(&pred, &truth).is_err());
}

#[test]
fn mean_error_is_translation_covariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let pred: Vec<Pose> = (0..5).map(|_| random_pose(&mut rng, 7)).collect();
        let truth: Vec<Pose> = (0..5).map(|_| random_pose(&mut rng, 7)).collect();
        let t = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        let a = mean_joint_error(&pred, &truth).unwrap().mean_error;
        let moved = |v: &[Pose]| v.iter().map(|p| p.translated(t)).collect::<Vec<_>>();
        let b = mean_joint_error(&moved(&pred), &moved(&truth)).unwrap().mean_error;
        assert!((a - b).abs() < 1e-9 * a);
        assert!(a >= 0.0);
    }
}

#[test]
fn view_mae_examples() {
    let a = DepthImage::new(4, (0..16).map(|i| i as f32 / 20.0 - 0.4).collect());
    let b = DepthImage::new(4, a.data().iter().map(|v| v + 0.1).collect());
    assert_eq!(view_prediction_mae(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
    assert!((view_prediction_mae(&[a.clone(), b.clone()], &[b, a.clone()]).unwrap() - 0.1).abs() < 1e-6);
    assert!(view_prediction_mae(&[a], &[]).is_err());
}

#[test]
fn median_and_percentile() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    assert_eq!(percentile(&v, 99.0), 99.0);
    assert_eq!(percentile(&v, 100.0), 100.0);
    assert_eq!(percentile(&v, 0.0), 1.0);
}

#[test]
fn histogram_uses_the_shared_support() {
    let a: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
    let b: Vec<f64> = (0..100).map(|i| i as f64 * 0.2).collect();
    let upper = shared_support(&[&a, &b]);
    let ha = DistanceDistribution::new((0..100).collect(), a.clone(), upper);
    let hb = DistanceDistribution::new((0..100).collect(), b, upper);
    assert_eq!(ha.upper, hb.upper);
    assert_eq!(ha.counts.len(), HISTOGRAM_BINS);
    assert_eq!(ha.counts.iter().sum::<usize>(), 100);
    assert_eq!(hb.counts.iter().sum::<usize>(), 100);
    // brute-force binning
    let width = upper / HISTOGRAM_BINS as f64;
    for (i, &c) in ha.counts.iter().enumerate() {
        let expect = a.iter().filter(|&&d| ((d / width) as usize).min(HISTOGRAM_BINS - 1) == i).count();
        assert_eq!(c, expect);
    }
    let mut out = Vec::new();
    ha.write_histogram_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), HISTOGRAM_BINS + 1);
}

#[test]
fn identical_domains_have_zero_latent_distance() {
    let d = data(false);
    let (model, store) = Model::init::<f32>(small_net(d.joints()), 3).unwrap();
    let ids = d.validation_ids();
    assert!(!ids.is_empty());
    let dist = latent_distances(&model, &store, &d, &ids).unwrap();
    assert_eq!(dist.len(), ids.len());
    assert!(dist.iter().all(|&v| v == 0.0));
}

#[test]
fn distances_ignore_sample_order() {
    let d = data(true);
    let (model, store) = Model::init::<f32>(small_net(d.joints()), 3).unwrap();
    let ids = d.test_ids();
    let fwd = latent_distances(&model, &store, &d, &ids).unwrap();
    let rev_ids: Vec<u32> = ids.iter().rev().copied().collect();
    let mut rev = latent_distances(&model, &store, &d, &rev_ids).unwrap();
    rev.reverse();
    for (a, b) in fwd.iter().zip(&rev) {
        assert!((a - b).abs() <= 1e-5 * a.max(1.0), "{a} {b}");
    }
    assert!(fwd.iter().any(|&v| v > 0.0));
}

#[test]
fn embeddings_layout_and_determinism() {
    let d = data(true);
    let cfg = small_net(d.joints());
    let (model, store) = Model::init::<f32>(cfg.clone(), 1).unwrap();
    let ids = d.validation_ids();
    let mut a = Vec::new();
    let rows = export_embeddings(&model, &store, &d, &ids, &mut a).unwrap();
    assert_eq!(rows, 2 * ids.len());
    let text = String::from_utf8(a.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), rows + 1);
    assert!(lines.iter().all(|l| l.split(',').count() == 3 + cfg.latent + 3 * cfg.joints));
    let mut b = Vec::new();
    export_embeddings(&model, &store, &d, &ids, &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reloaded_checkpoint_gives_the_same_numbers() {
    let d = data(true);
    let cfg = small_net(d.joints());
    let (model, store) = Model::init::<f32>(cfg.clone(), 4).unwrap();
    let ids = d.validation_ids();
    let me = evaluate(&model, &store, &d, &ids, Domain::Real).unwrap();
    let dist = latent_distances(&model, &store, &d, &ids).unwrap();

    let bytes = Checkpoint::from_store(&store).to_bytes();
    let (model2, mut fresh) = Model::init::<f32>(cfg, 99).unwrap();
    Checkpoint::from_bytes(&bytes).unwrap().load_into(&mut fresh).unwrap();
    assert_eq!(evaluate(&model2, &fresh, &d, &ids, Domain::Real).unwrap(), me);
    assert_eq!(latent_distances(&model2, &fresh, &d, &ids).unwrap(), dist);
    assert!(evaluate_views(&model2, &fresh, &d, &ids, Domain::Real).unwrap() >= 0.0);
}

#[test]
fn nearest_neighbors_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train: Vec<(u32, Pose)> = (0..200).map(|i| (i, random_pose(&mut rng, 7))).collect();
    let test: Vec<(u32, f64, Pose)> =
        (0..30).map(|i| (1000 + i, rng.random_range(0.0..20.0), random_pose(&mut rng, 7))).collect();
    let reports = nn_error_analysis(&test, &train, 10, 5);
    assert_eq!(reports.len(), 10);
    let mut by_error = test.clone();
    by_error.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (r, t) in reports.iter().zip(&by_error) {
        assert_eq!(r.test_id, t.0);
        // independent distance: subtract means per axis, average joint norms
        let center = |p: &Pose| {
            let n = p.joint_count() as f64;
            let m: Vec<f64> = (0..3).map(|a| p.joints().iter().map(|j| j[a]).sum::<f64>() / n).collect();
            p.joints().iter().map(|j| [j[0] - m[0], j[1] - m[1], j[2] - m[2]]).collect::<Vec<_>>()
        };
        let ct = center(&t.2);
        let mut all: Vec<(u32, f64)> = train
            .iter()
            .map(|(id, p)| {
                let cp = center(p);
                let d = ct.iter().zip(&cp).map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()).sum::<f64>()
                    / 7.0;
                (*id, d)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1));
        let ids: Vec<u32> = all[..5].iter().map(|x| x.0).collect();
        assert_eq!(r.neighbors.iter().map(|x| x.0).collect::<Vec<_>>(), ids);
        for ((_, a), (_, b)) in r.neighbors.iter().zip(&all) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn nearest_neighbor_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let train: Vec<(u32, Pose)> = (0..20).map(|i| (i, random_pose(&mut rng, 7))).collect();
    let test = vec![(50, 3.0, train[7].1.clone()), (51, 1.0, train[3].1.translated([40.0, -10.0, 5.0]))];
    let r = nn_error_analysis(&test, &train, 2, 3);
    assert_eq!(r[0].neighbors[0], (7, 0.0));
    assert_eq!(r[1].neighbors[0].0, 3);
    assert!(r[1].neighbors[0].1 < 1e-9);
    let mut out = Vec::new();
    write_nn_csv(&r, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 6);
}
