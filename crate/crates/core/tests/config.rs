use latentmap::config::*;
use latentmap::trainer::Variant;
use latentmap::ErrorKind;
use proptest::prelude::*;

#[test]
fn defaults_round_trip() {
    let s = Settings::default();
    let text = s.to_text();
    assert_eq!(text.lines().count(), keys().count());
    assert_eq!(Settings::parse(&text).unwrap(), s);
}

#[test]
fn changed_values_round_trip() {
    let mut s = Settings::default();
    s.apply_text(
        "# a run\n\
         variant = view-pred\n\
         n_labeled = all\n\
         loss.lambda_g = 0.0016\n\
         optim.alpha0 = 0.1234567891234\n\
         net.stages = 4,8\n\
         hand.orientation_range = 0.1,0.2,0.3\n\
         gen.noise_mm = 12.5\n\
         dataset_hash = abc\n\
         freeze_pose = true\n",
    )
    .unwrap();
    assert_eq!(s.run.variant, Variant::ViewPred);
    assert_eq!(s.run.n_labeled, None);
    assert_eq!(s.run.net.stages, vec![4, 8]);
    assert_eq!(s.dataset_hash.as_deref(), Some("abc"));
    assert!(s.run.freeze_pose);
    let back = Settings::parse(&s.to_text()).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.to_text(), s.to_text());
    assert_eq!(s.gen.to_gen_config().unwrap().corruption.noise_sigma_mm(), 12.5);
}

#[test]
fn malformed_documents_are_config_errors() {
    for bad in ["nope = 1", "seed = 1\nseed = 2", "seed", "seed = x", "variant = best", "freeze_pose = maybe", "n_labeled = -3"] {
        let e = Settings::parse(bad).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config, "{bad}");
    }
    let e = Settings::parse("seed = 1\n\nbogus = 2").unwrap_err();
    assert!(e.to_string().contains("line 3"), "{e}");
}

#[test]
fn environment_overrides() {
    assert_eq!(env_name("optim.batch"), "LATENTMAP_OPTIM_BATCH");
    let mut s = Settings::parse("optim.batch = 16").unwrap();
    s.apply_env([
        ("LATENTMAP_OPTIM_BATCH".to_string(), "32".to_string()),
        ("HOME".to_string(), "/root".to_string()),
        ("LATENTMAP_N_LABELED".to_string(), "10".to_string()),
    ])
    .unwrap();
    assert_eq!(s.run.optim.batch, 32);
    assert_eq!(s.run.n_labeled, Some(10));
    assert!(s.apply_env([("LATENTMAP_NOPE".to_string(), "1".to_string())]).is_err());
}

#[test]
fn every_key_is_documented_and_readable() {
    let s = Settings::default();
    for (k, help) in keys() {
        assert!(!help.is_empty(), "{k}");
        assert!(s.get(k).is_some(), "{k}");
    }
    assert!(s.get("missing").is_none());
}

proptest! {
    #[test]
    fn unknown_keys_are_rejected(key in "[a-z_.]{1,20}", value in "[a-z0-9]{0,6}") {
        prop_assume!(keys().all(|(k, _)| k != key));
        let e = Settings::parse(&format!("{key} = {value}")).unwrap_err();
        prop_assert_eq!(e.kind(), ErrorKind::Config);
    }
}
