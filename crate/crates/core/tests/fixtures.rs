//! The committed fixtures are exactly what the seeded generators produce.

use std::path::PathBuf;

use sinn_core::dataset::{ingest_jsonl, to_jsonl_string};
use sinn_core::extractor::contract_to_units;
use sinn_core::{synth, Intent};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

#[test]
fn contract_fixtures_regenerate() {
    assert_eq!(read("sample.jsonl"), to_jsonl_string(&[synth::sample_contract()]));
    assert_eq!(read("separable.jsonl"), to_jsonl_string(&synth::separable_contracts(40, 1)));
    assert_eq!(
        read("skewed_train.jsonl"),
        to_jsonl_string(&synth::skewed_contracts(1000, Intent::Fee, 20, 0.25, 11))
    );
    assert_eq!(
        read("skewed_eval.jsonl"),
        to_jsonl_string(&synth::skewed_contracts(500, Intent::Fee, 10, 0.25, 12))
    );
}

#[test]
fn mlm_fixture_regenerates() {
    let codes: Vec<String> = read("mlm_units.jsonl")
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["code"].as_str().unwrap().to_string())
        .collect();
    let fresh: Vec<String> = synth::mlm_corpus(100, 7).into_iter().map(|u| u.code).collect();
    assert_eq!(codes, fresh);
}

#[test]
fn skewed_fixture_prevalence() {
    for (name, n) in [("skewed_train.jsonl", 1000), ("skewed_eval.jsonl", 500)] {
        let data = ingest_jsonl(fixture(name)).unwrap();
        assert_eq!(data.len(), n);
        let rare = data.iter().filter(|c| c.labels.get(Intent::Fee)).count();
        assert_eq!(rare * 50, n, "{name}: Fee at 2%");
    }
}

#[test]
fn sample_fixture_units() {
    let data = ingest_jsonl(fixture("sample.jsonl")).unwrap();
    let names: Vec<String> = contract_to_units(&data[0]).unwrap().into_iter().map(|u| u.name).collect();
    assert_eq!(names, ["setTxLimit", "setFees", "tradingStatus"]);
}
