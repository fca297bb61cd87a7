use std::collections::BTreeSet;

use latentmap::datapipe::*;
use latentmap::image::DepthImage;
use latentmap::pose::Pose;
use latentmap::toyhand::{generate_dataset, CorruptionParams, GenConfig, RawDepth};
use latentmap::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(count: usize, seed: u64) -> Dataset {
    generate_dataset(&GenConfig::desk(count, seed)).unwrap()
}

fn random_dataset(seed: u64, count: usize, res: usize, joints: usize, views: usize, domains: u32) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flags = DomainFlags(domains);
    let mut imgs = |present: bool, rng: &mut ChaCha8Rng| -> Vec<DepthImage> {
        if !present {
            return Vec::new();
        }
        (0..views).map(|_| DepthImage::new(res, (0..res * res).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())).collect()
    };
    let records = (0..count)
        .map(|i| {
            let pose = Pose::from_flat(&(0..3 * joints).map(|_| (rng.random::<f32>() * 100.0) as f64).collect::<Vec<_>>());
            let split = [Split::Train, Split::Test, Split::Validation][rng.random_range(0..3)];
            let rank = if split == Split::Train { i as u32 } else { NO_RANK };
            let s = imgs(flags.has_synthetic(), &mut rng);
            let r = imgs(flags.has_real(), &mut rng);
            Record::new(i as u32, split, rank, pose, s, r)
        })
        .collect();
    let header = DatasetHeader {
        version: CONTAINER_VERSION,
        count: count as u32,
        resolution: res as u32,
        joints: joints as u32,
        views: views as u32,
        domains: flags,
        seed,
        mm_per_pixel: 4.5,
        depth_range_mm: 80.0,
    };
    Dataset::new(header, records).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn container_round_trip_is_bit_exact(
        seed in any::<u64>(),
        count in 0usize..6,
        res in 1usize..9,
        joints in 1usize..8,
        views in 1usize..4,
        domains in 1u32..4,
    ) {
        let ds = random_dataset(seed, count, res, joints, views, domains);
        let bytes = ds.to_bytes();
        prop_assert_eq!(bytes.len(), HEADER_LEN + count * ds.header().record_len());
        let back = Dataset::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn header_layout_is_documented_layout() {
    let ds = random_dataset(3, 2, 4, 7, 2, 3);
    let b = ds.to_bytes();
    assert_eq!(&b[..4], b"MRDS");
    let word = |i: usize| u32::from_le_bytes(b[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!([word(0), word(1), word(2), word(3), word(4), word(5)], [1, 2, 4, 7, 2, 3]);
    assert_eq!(word(6) as u64 | (word(7) as u64) << 32, 3);
    assert_eq!(f32::from_le_bytes(b[36..40].try_into().unwrap()), 4.5);
    assert_eq!(ds.header().record_len(), 12 + 12 * 7 + 2 * 2 * 16 * 4);
}

#[test]
fn reader_rejects_count_mismatch_and_bad_magic() {
    let ds = random_dataset(1, 3, 4, 2, 2, 3);
    let mut b = ds.to_bytes();
    b[8] = 4;
    assert!(matches!(Dataset::from_bytes(&b), Err(Error::Format { .. })));
    let mut b = ds.to_bytes();
    b.pop();
    assert!(Dataset::from_bytes(&b).is_err());
    let mut b = ds.to_bytes();
    b[0] = b'X';
    assert!(Dataset::from_bytes(&b).is_err());
    let mut b = ds.to_bytes();
    b[4] = 9;
    assert!(Dataset::from_bytes(&b).is_err());
    assert!(Dataset::from_bytes(&[]).is_err());
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.mrds");
    let ds = dataset(20, 4);
    ds.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back.content_hash(), ds.content_hash());
    assert!(matches!(Dataset::read(&dir.path().join("missing")), Err(Error::Io { .. })));
}

fn flat_raw(depth: f64) -> RawDepth {
    RawDepth { size: 64, mm_per_pixel: 2.0, center: [0.0, 0.0], data: vec![depth; 64 * 64] }
}

#[test]
fn preprocess_constant_patch_at_center_depth_is_zero() {
    let spec = CropSpec { resolution: 16, crop_mm: 64.0, depth_range_mm: 50.0 };
    let img = preprocess(&flat_raw(300.0), [0.0, 0.0, 300.0], &spec).unwrap();
    assert!(img.data().iter().all(|&v| v == 0.0));
}

#[test]
fn preprocess_maps_range_endpoints() {
    let spec = CropSpec { resolution: 16, crop_mm: 64.0, depth_range_mm: 50.0 };
    let near = preprocess(&flat_raw(250.0), [0.0, 0.0, 300.0], &spec).unwrap();
    assert!(near.data().iter().all(|&v| v == -1.0));
    // the far endpoint coincides with the background value, so keep a near pixel in the crop
    let mut raw = flat_raw(350.0);
    for r in 30..34 {
        for c in 30..34 {
            raw.data[r * 64 + c] = 300.0;
        }
    }
    let far = preprocess(&raw, [0.0, 0.0, 300.0], &spec).unwrap();
    assert_eq!(far.foreground_count(), 4);
    assert_eq!(far.data().iter().filter(|&&v| v == 1.0).count(), 252);
}

#[test]
fn preprocess_errors() {
    let spec = CropSpec { resolution: 16, crop_mm: 64.0, depth_range_mm: 50.0 };
    assert!(matches!(preprocess(&flat_raw(300.0), [100.0, 0.0, 300.0], &spec), Err(Error::HandOutsideFrame(..))));
    assert!(matches!(preprocess(&flat_raw(f64::INFINITY), [0.0, 0.0, 300.0], &spec), Err(Error::EmptyCrop)));
}

#[test]
fn preprocess_is_deterministic() {
    let mut raw = flat_raw(f64::INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for v in raw.data.iter_mut().take(2000) {
        *v = 280.0 + rng.random::<f64>() * 40.0;
    }
    let spec = CropSpec { resolution: 32, crop_mm: 96.0, depth_range_mm: 50.0 };
    assert_eq!(preprocess(&raw, [3.0, -1.0, 300.0], &spec).unwrap(), preprocess(&raw, [3.0, -1.0, 300.0], &spec).unwrap());
}

const SCALE: CropScale = CropScale { mm_per_pixel: 4.5, depth_range_mm: 80.0 };

#[test]
fn zero_draw_is_identity() {
    let ds = dataset(12, 2);
    let rec = &ds.records()[0];
    let p = AugmentParams::identity();
    let (img, pose) = augment(&rec.real[0], Some(rec.pose_unguarded()), &p, &SCALE);
    assert_eq!(img, rec.real[0]);
    assert_eq!(pose.as_ref(), Some(rec.pose_unguarded()));
    let off = AugmentConfig { enabled: false, ..Default::default() };
    assert_eq!(AugmentParams::draw(&off, &mut ChaCha8Rng::seed_from_u64(0)), p);
}

/// Smooth radial bowl that fills the whole crop.
fn bowl(n: usize) -> DepthImage {
    let c = n as f64 / 2.0;
    let data = (0..n * n)
        .map(|i| {
            let (r, col) = ((i / n) as f64 + 0.5 - c, (i % n) as f64 + 0.5 - c);
            (-0.5 + 0.4 * (r * r + col * col) / (c * c)) as f32
        })
        .collect();
    DepthImage::new(n, data)
}

#[test]
fn double_rotation_returns_near_identity() {
    let n = 32;
    let img = bowl(n);
    let rot = |theta: f64| AugmentParams { rotation: theta.to_radians(), ..AugmentParams::identity() };
    let out = augment_image(&augment_image(&img, &rot(60.0), &SCALE), &rot(-60.0), &SCALE);
    // one quantization step: the depth change across one pixel of the bowl's steepest slope
    let step = 0.4 * 2.0 * (n as f64 / 2.0) / (n as f64 / 2.0).powi(2);
    // smooth region: inside the disc that stays in frame under both rotations
    let c = n as f64 / 2.0;
    for r in 0..n {
        for col in 0..n {
            let (y, x) = (r as f64 + 0.5 - c, col as f64 + 0.5 - c);
            if (x * x + y * y).sqrt() < c - 2.0 {
                let d = (out.get(r, col) - img.get(r, col)).abs() as f64;
                assert!(d < 2.0 * step, "pixel ({r},{col}) off by {d}");
            }
        }
    }
}

#[test]
fn pose_follows_image_rotation() {
    // a single foreground pixel and a joint at its center move together
    let n = 32;
    let mut img = DepthImage::background(n);
    let (row, col) = (10, 22);
    for dr in 0..3 {
        for dc in 0..3 {
            img.set(row - 1 + dr, col - 1 + dc, 0.0);
        }
    }
    let xy = |r: usize, c: usize| [(c as f64 + 0.5 - 16.0) * 4.5, (r as f64 + 0.5 - 16.0) * 4.5];
    let [x, y] = xy(row, col);
    let pose = Pose::new(vec![[x, y, 0.0]]);
    let p = AugmentParams { rotation: 0.7, offset_mm: [4.0, -3.0], noise_sigma_mm: 0.0, noise_seed: 0 };
    let (out, moved) = augment(&img, Some(&pose), &p, &SCALE);
    let [jx, jy, _] = moved.unwrap().joints()[0];
    let c = (jx / 4.5 + 16.0).floor() as usize;
    let r = (jy / 4.5 + 16.0).floor() as usize;
    assert!(out.is_foreground(r, c), "joint moved to ({r},{c}) which is background");
}

#[test]
fn rotation_draws_are_uniform() {
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let max = 60f64.to_radians();
    let mut draws: Vec<f64> = (0..10_000).map(|_| AugmentParams::draw(&cfg, &mut rng).rotation).collect();
    assert!(draws.iter().all(|a| (-max..=max).contains(a)));
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = draws.len() as f64;
    // Kolmogorov-Smirnov statistic against U[-max, max]
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let f = (a + max) / (2.0 * max);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // asymptotic critical value for p = 0.01
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn augmentation_noise_touches_foreground_only() {
    let ds = dataset(12, 6);
    let img = &ds.records()[0].real[0];
    let p = AugmentParams { noise_sigma_mm: 5.0, noise_seed: 4, ..AugmentParams::identity() };
    let out = augment_image(img, &p, &SCALE);
    for (a, b) in img.data().iter().zip(out.data()) {
        assert_eq!(*a == 1.0, *b == 1.0);
    }
    assert_ne!(&out, img);
}

#[test]
fn batch_of_64_has_four_sets_of_16() {
    let ds = dataset(60, 9);
    let guard = LabelGuard::new(10);
    let spec = BatchSpec::new(64, AugmentConfig::default()).unwrap();
    let b = compose_batch(&ds, &guard, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(b.set_sizes(), [16, 16, 16, 16]);
    assert_eq!(b.image_count(), 80);
    assert!(b.unlabeled.iter().all(|i| !i.is_labeled() && i.domain == Domain::Real));
    assert!(b.synthetic.iter().all(|i| i.is_labeled() && i.domain == Domain::Synthetic));
    for (s, r) in &b.corresponding {
        assert_eq!(s.id, r.id);
        assert_eq!(s.pose, r.pose);
        assert_eq!((s.domain, r.domain), (Domain::Synthetic, Domain::Real));
    }
    assert!(BatchSpec::new(30, AugmentConfig::default()).is_err());
}

#[test]
fn labeled_sets_draw_only_from_first_n() {
    let ds = dataset(100, 10);
    let allowed: BTreeSet<u32> = ds.labeled_ids(10).into_iter().collect();
    let guard = LabelGuard::new(10);
    let spec = BatchSpec::new(64, AugmentConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let b = compose_batch(&ds, &guard, &spec, &mut rng).unwrap();
        assert!(b.corresponding.iter().all(|(s, _)| allowed.contains(&s.id)));
        assert!(b.real.iter().all(|i| allowed.contains(&i.id)));
    }
}

#[test]
fn guard_sees_at_most_n_ids_over_an_epoch() {
    let ds = dataset(200, 11);
    let guard = LabelGuard::new(10);
    let spec = BatchSpec::new(64, AugmentConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let iters = iterations_per_epoch(&ds, 64);
    assert_eq!(iters, 3);
    for _ in 0..iters {
        compose_batch(&ds, &guard, &spec, &mut rng).unwrap();
    }
    assert!(guard.distinct_real_ids() <= 10);
    assert!(guard.real_ids().iter().all(|id| ds.labeled_ids(10).contains(id)));
    assert_eq!(guard.real_reads(), iters * 32);
    assert_eq!(guard.denied(), 0);
}

#[test]
fn guard_refuses_unlabeled_and_test_labels() {
    let ds = dataset(50, 12);
    let guard = LabelGuard::new(5);
    let unlabeled = ds.labeled_ids(40)[20];
    assert!(matches!(guard.real_pose(ds.record(unlabeled)), Err(Error::LabelAccess { .. })));
    let test = ds.test_ids()[0];
    assert!(guard.real_pose(ds.record(test)).is_err());
    assert!(guard.synthetic_pose(ds.record(test)).is_err());
    assert!(guard.synthetic_pose(ds.record(unlabeled)).is_ok());
    assert_eq!(guard.distinct_real_ids(), 0);
    assert_eq!(guard.denied(), 3);
}

#[test]
fn empty_labeled_pool_is_an_error() {
    let ds = dataset(20, 13);
    let guard = LabelGuard::new(0);
    let spec = BatchSpec::new(8, AugmentConfig::default()).unwrap();
    let err = compose_batch(&ds, &guard, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::InsufficientPool { set: "corresponding", .. }));
}

#[test]
fn epoch_length_ignores_labeled_subset() {
    let ds = dataset(100, 14);
    assert_eq!(iterations_per_epoch(&ds, 64), 2);
    assert_eq!(iterations_per_epoch(&ds, 16), 5);
}

#[test]
fn corruption_free_dataset_has_equal_domains() {
    let mut cfg = GenConfig::desk(12, 1);
    cfg.corruption = CorruptionParams::none();
    let ds = generate_dataset(&cfg).unwrap();
    assert!(ds.records().iter().all(|r| r.real == r.synthetic));
}
