use latentmap::nets::{Checkpoint, EntryKind, Net, ParamId, ParamStore, Role};
use latentmap::optimizer::*;
use latentmap::Error;

#[test]
fn defaults() {
    let c = OptimConfig::default();
    assert_eq!((c.alpha0, c.beta1, c.beta2, c.eps, c.decay, c.batch), (3.3e-4, 0.9, 0.999, 1e-8, 0.04, 64));
    assert!(c.validate().is_ok());
    assert!(OptimConfig { beta2: 1.0, ..c }.validate().is_err());
    assert!(OptimConfig { alpha0: 0.0, ..c }.validate().is_err());
}

#[test]
fn schedule_examples() {
    let c = OptimConfig::default();
    assert!((schedule_factor(0, 0.04) - 0.1089).abs() < 1e-15);
    assert!((c.lr_at(0) - 3.5937e-5).abs() < 1e-12);
    assert_eq!(schedule_factor(1, 0.04), schedule_factor(0, 0.04));
    assert!((schedule_factor(2, 0.04) - 0.33).abs() < 1e-15);
    assert!((schedule_factor(10, 0.04) - 0.6703200460356393).abs() < 1e-12);
    // warm-up ends below the decay curve
    assert!((schedule_factor(3, 0.04) - 0.33).abs() < 1e-15);
    assert!((schedule_factor(4, 0.04) - (-0.16f64).exp()).abs() < 1e-15);
}

#[test]
fn schedule_state_counts_epochs() {
    let c = OptimConfig::default();
    let s = ScheduleState::at(&c, 49, 25);
    assert_eq!(s.epoch, 1);
    assert_eq!(s.lr, c.lr_at(1));
    assert_eq!(ScheduleState::at(&c, 50, 25).epoch, 2);
}

fn store(values: Vec<f32>) -> (ParamStore<f32>, ParamId) {
    let mut s = ParamStore::new();
    let n = values.len();
    let id = s.add(Net::F, "w", &[n], Role::Param, values);
    (s, id)
}

#[test]
fn zero_gradient_leaves_parameters() {
    let (mut s, id) = store(vec![0.5, -1.0]);
    let mut adam = Adam::new(&OptimConfig::default());
    adam.step(&mut s, &[(id, vec![1.0, 1.0])], 1e-3).unwrap();
    let after_one = s.values(id).to_vec();
    let (m1, _) = adam.moments(id).map(|(m, v)| (m.to_vec(), v.to_vec())).unwrap();
    // a zero gradient still moves by the decayed first moment, so compare moments
    adam.step(&mut s, &[(id, vec![0.0, 0.0])], 0.0).unwrap();
    assert_eq!(s.values(id), after_one.as_slice());
    let (m2, _) = adam.moments(id).unwrap();
    assert!((m2[0] - 0.9 * m1[0]).abs() < 1e-7);

    let (mut fresh, fid) = store(vec![0.5, -1.0]);
    let mut a2 = Adam::new(&OptimConfig::default());
    a2.step(&mut fresh, &[(fid, vec![0.0, 0.0])], 1e-3).unwrap();
    assert_eq!(fresh.values(fid), &[0.5, -1.0]);
}

#[test]
fn first_step_moves_by_the_learning_rate() {
    let (mut s, id) = store(vec![2.0]);
    let mut adam = Adam::<f32>::new(&OptimConfig::default());
    adam.step(&mut s, &[(id, vec![1.0])], 0.01).unwrap();
    let moved = 2.0 - s.values(id)[0];
    assert!((moved - 0.01).abs() < 1e-6, "{moved}");
    assert_eq!(adam.steps(), 1);
}

#[test]
fn identical_runs_are_bit_identical() {
    let run = || {
        let (mut s, id) = store((0..16).map(|i| i as f32 * 0.1).collect());
        let mut adam = Adam::new(&OptimConfig::default());
        for t in 0..100 {
            let g: Vec<f32> = s.values(id).iter().enumerate().map(|(i, w)| w * (i as f32 + 1.0) - (t as f32).sin()).collect();
            adam.step(&mut s, &[(id, g)], 1e-3).unwrap();
        }
        s.values(id).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let (mut s, id) = store(vec![1.0, 2.0]);
    let mut adam = Adam::new(&OptimConfig::default());
    let err = adam.step(&mut s, &[(id, vec![0.0, f32::NAN])], 1e-3).unwrap_err();
    match err {
        Error::NonFiniteGradient(name) => assert_eq!(name, "f.w"),
        e => panic!("unexpected {e}"),
    }
    assert_eq!(s.values(id), &[1.0, 2.0]);
    assert_eq!(adam.steps(), 0);
}

#[test]
fn state_survives_a_checkpoint() {
    let (mut s, id) = store(vec![1.0, 2.0, 3.0]);
    let h = s.add(Net::H, "w", &[1], Role::Param, vec![0.0]);
    let mut adam = Adam::new(&OptimConfig::default());
    for _ in 0..3 {
        adam.step(&mut s, &[(id, vec![0.3, -0.1, 2.0])], 1e-2).unwrap();
    }
    let mut ck = Checkpoint::from_store(&s);
    ck.entries.extend(adam.export(&s));
    assert_eq!(ck.entries_of(EntryKind::AdamM).count(), 1);
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    let mut restored = Adam::new(&OptimConfig::default());
    restored.import(&s, &back.entries, &[Net::F], adam.steps()).unwrap();
    assert_eq!(restored, adam);
    assert!(restored.moments(h).is_none());

    let (mut s1, mut s2) = (s.clone(), s.clone());
    adam.step(&mut s1, &[(id, vec![1.0, 1.0, 1.0])], 1e-2).unwrap();
    restored.step(&mut s2, &[(id, vec![1.0, 1.0, 1.0])], 1e-2).unwrap();
    assert_eq!(s1, s2);
}
