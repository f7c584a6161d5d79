//! Shared inputs for the pipeline benchmarks.

use sinn_core::encoder::{EncoderConfig, EncoderParams};
use sinn_core::extractor::FunctionUnit;
use sinn_core::synth;
use sinn_core::tokenizer::{encode, train_vocab, TokenSequence, Vocabulary};

pub struct Workload {
    pub units: Vec<FunctionUnit>,
    pub vocab: Vocabulary,
    pub sequences: Vec<TokenSequence>,
    pub encoder: EncoderParams,
}

/// 100 synthetic functions, a 512-token vocabulary and a desk encoder.
pub fn workload(seed: u64) -> Workload {
    let units = synth::mlm_corpus(100, seed);
    let vocab = train_vocab(&units, 512).expect("corpus trains a vocabulary");
    let sequences = units.iter().map(|u| encode(&u.code, &vocab, 512)).collect();
    let encoder = EncoderParams::init(&EncoderConfig::desk(vocab.size()), seed).expect("desk config is valid");
    Workload {
        units,
        vocab,
        sequences,
        encoder,
    }
}
