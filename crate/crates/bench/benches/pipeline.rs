use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use sinn_core::classifier::{build_contract_matrix, sample_loss_and_grad, ClassifierConfig, ClassifierParams, FocalParams, Mode};
use sinn_core::encoder::{embed, mask_tokens, mlm_loss_and_grad};
use sinn_core::extractor::extract_functions;
use sinn_core::metrics::{confusion, MetricReport};
use sinn_core::tokenizer::encode;
use sinn_core::{rng, synth, IntentLabelVector};

fn front_end(c: &mut Criterion) {
    let w = sinn_bench::workload(7);
    let contracts = synth::separable_contracts(40, 1);
    c.bench_function("extract/40 contracts", |b| {
        b.iter(|| contracts.iter().map(|k| extract_functions(&k.source).unwrap().len()).sum::<usize>())
    });
    c.bench_function("tokenize/100 functions", |b| {
        b.iter(|| w.units.iter().map(|u| encode(&u.code, &w.vocab, 512).len()).sum::<usize>())
    });
}

fn encoder(c: &mut Criterion) {
    let w = sinn_bench::workload(7);
    let seq = &w.sequences[0];
    let m = mask_tokens(seq, 0.15, 1).unwrap();
    c.bench_function("encoder/embed one function", |b| b.iter(|| embed(&w.encoder, seq).unwrap()));
    c.bench_function("encoder/mlm loss and grad", |b| {
        b.iter(|| mlm_loss_and_grad(&w.encoder, &m.masked, &m.positions, &m.targets).unwrap())
    });
}

fn classifier(c: &mut Criterion) {
    let cfg = ClassifierConfig::desk(32);
    let params = ClassifierParams::init(&cfg, 3).unwrap();
    let mut r = rng::seeded(4);
    let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..32).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect()).collect();
    let m = build_contract_matrix(&rows, cfg.l_cap).unwrap();
    let y = [true, false, false, false, true, false, false, false, false, false];
    c.bench_function("classifier/focal loss and grad", |b| {
        b.iter(|| sample_loss_and_grad(&params, &m, &y, FocalParams::default(), Mode::Train { dropout_seed: 1 }).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let data = synth::separable_contracts(40, 1);
    let truths: Vec<IntentLabelVector> = data.iter().map(|k| k.labels).collect();
    let preds: Vec<IntentLabelVector> = truths.iter().rev().copied().collect();
    c.bench_function("metrics/report for 40 contracts", |b| {
        b.iter(|| MetricReport::new(&confusion(&preds, &truths).unwrap(), 0.5).to_csv().unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().measurement_time(Duration::from_secs(3)).warm_up_time(Duration::from_secs(1));
    targets = front_end, encoder, classifier, metrics
}
criterion_main!(benches);
