mod common;

use common::{oracle_dataset, oracle_fnv1a64, oracle_histogram};
use gridgate_core::checksum::{checksum_hex, fnv1a64};
use gridgate_core::fabric::app::{merge_histograms, Histogram};
use gridgate_core::fabric::run_simulated_app;
use proptest::prelude::*;

#[test]
fn fnv_reference_vectors() {
    for (input, hash) in [
        (&b""[..], 0xcbf29ce484222325u64),
        (b"a", 0xaf63dc4c8601ec8c),
        (b"foobar", 0x85944171f73967e8),
    ] {
        assert_eq!(oracle_fnv1a64(input), hash);
        assert_eq!(fnv1a64(input), hash);
    }
    assert_eq!(checksum_hex(b"foobar"), "85944171f73967e8");
}

#[test]
fn summary_file_layout() {
    let out = run_simulated_app(3, "atlfast", 1);
    let json: serde_json::Value = serde_json::to_value(out.summary_file()).unwrap();
    assert_eq!(json["events"], 3);
    assert_eq!(json["exit_code"], 0);
    let total: u64 = json["histogram"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, 3);
}

#[test]
fn dataset_merge_matches_oracle() {
    let mut merged = Histogram::new();
    for i in 0..10u64 {
        merge_histograms(
            &mut merged,
            &run_simulated_app(100, "atlfast", 7 + i).summary,
        );
    }
    assert_eq!(merged, oracle_dataset(10, 100, "atlfast", 7));
    assert_eq!(merged.values().sum::<u64>(), 1000);
}

proptest! {
    #[test]
    fn histogram_matches_rehash(events in 0u64..300, model in "[a-z]{1,12}", seed in any::<u64>()) {
        let out = run_simulated_app(events, &model, seed);
        prop_assert_eq!(&out.summary, &oracle_histogram(events, &model, seed));
        prop_assert_eq!(out.ntuple.len() as u64, events);
        prop_assert!(out.summary.keys().all(|b| *b < 10));
        prop_assert_eq!(out.ntuple_csv().lines().count() as u64, events + 1);
        for row in &out.ntuple {
            prop_assert!(row.pt >= 20.0 && row.eta.abs() <= 2.5 && row.phi.abs() <= std::f64::consts::PI);
        }
    }
}
