mod common;

use common::*;
use proptest::prelude::*;
use syntrace::trace_model::{load_profile, parse_profile, save_profile, to_json, ProfileError};

proptest! {
    #[test]
    fn round_trip_preserves_bundle(seed in any::<u64>(), n in 1usize..40, num_ps in 1u8..=2, steps in 1usize..4) {
        let mut r = rng(seed);
        let templates = random_dag(&mut r, n, num_ps);
        let b = bundle(steps_from(&templates, steps, &mut r), 100_000_000, 1e-4, 12.5, 65_536, num_ps);
        let parsed = parse_profile(&to_json(&b)).unwrap();
        prop_assert_eq!(parsed, b);
    }
}

#[test]
fn saved_profiles_load_back() {
    let mut r = rng(1);
    let b = bundle(
        steps_from(&random_layered(&mut r, 4, 2), 3, &mut r),
        10_000_000,
        0.0,
        0.0,
        1_000,
        2,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    save_profile(&b, &path).unwrap();
    assert_eq!(load_profile(&path).unwrap(), b);
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(
        load_profile("/nonexistent/profile.json"),
        Err(ProfileError::Io(_))
    ));
}

#[test]
fn reverse_edges_alone_are_enough() {
    let doc = r#"{
      "meta": { "profile_bandwidth_bps": 8000000, "alpha_us_per_byte": 0, "beta_us": 0, "win_bytes": 10, "num_ps": 1 },
      "steps": [ { "ops": [
        { "id": "a", "res": "downlink:0", "kind": "comm", "size_bytes": 5, "dependents": ["b"] },
        { "id": "b", "res": "worker", "kind": "comp", "duration_us": 3 }
      ] } ]
    }"#;
    let b = parse_profile(doc).unwrap();
    let op = b.steps[0].op("b").unwrap();
    assert!(op.waiting_for.contains("a"));
}

#[test]
fn structure_must_match_across_steps() {
    let doc = r#"{
      "meta": { "profile_bandwidth_bps": 8000000, "alpha_us_per_byte": 0, "beta_us": 0, "win_bytes": 10, "num_ps": 1 },
      "steps": [
        { "ops": [ { "id": "a", "res": "worker", "kind": "comp", "duration_us": 3 } ] },
        { "ops": [ { "id": "z", "res": "worker", "kind": "comp", "duration_us": 3 } ] }
      ]
    }"#;
    assert!(matches!(
        parse_profile(doc),
        Err(ProfileError::StructureMismatch { step: 1 })
    ));
}
