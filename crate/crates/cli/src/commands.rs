use std::collections::HashMap;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sinn_core::checkpoint::write_atomic;
use sinn_core::classifier::{binarize, ClassifierConfig, ClassifierParams, FocalParams, PredictionVector};
use sinn_core::dataset::{ingest_jsonl, split, to_jsonl_string};
use sinn_core::encoder::{pretrain, EncoderConfig, EncoderParams, PretrainConfig};
use sinn_core::extractor::{contract_to_units, FunctionUnit};
use sinn_core::metrics::{confusion, MetricReport};
use sinn_core::tokenizer::{encode, train_vocab_from_texts, Vocabulary, DEFAULT_VOCAB_SIZE};
use sinn_core::trainer::{loss_trace_csv, predict_all, train_two_phase, Featurizer, TrainConfig};
use sinn_core::{rng, synth, Checkpoint, Intent, IntentLabelVector, SourceContract, NUM_CLASSES};

use crate::error::CliError;
use crate::manifest::ManifestBuilder;
use crate::settings::Settings;
use crate::{Command, SynthKind};

/// One line of the function-unit JSONL written by `extract`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: String,
    pub ordinal: usize,
    pub name: String,
    pub code: String,
}

/// One line of the prediction JSONL written by `predict`.
#[derive(Clone, Debug, Serialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(flatten)]
    pub prediction: PredictionVector,
}

#[derive(Deserialize)]
struct PredictionLine {
    id: String,
    labels: Vec<u8>,
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.to_path_buf()))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_units(path: &Path) -> Result<Vec<UnitRecord>> {
    require(path)?;
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UnitRecord = serde_json::from_str(&line).map_err(|source| sinn_core::Error::Json { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

fn units_jsonl(units: &[UnitRecord]) -> String {
    let mut s = String::new();
    for u in units {
        s.push_str(&serde_json::to_string(u).expect("units serialize"));
        s.push('\n');
    }
    s
}

fn load_contracts(path: &Path) -> Result<Vec<SourceContract>> {
    require(path)?;
    Ok(ingest_jsonl(path)?)
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    require(path)?;
    Ok(Vocabulary::load(path)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path)?;
    Ok(Checkpoint::load(path)?)
}

/// Rejects a checkpoint trained against a different vocabulary.
fn check_vocab(ck: &Checkpoint, vocab: &Vocabulary, what: &Path) -> Result<(), CliError> {
    match ck.config.get("vocab_hash").and_then(|v| v.as_str()) {
        Some(h) if h != vocab.content_hash() => Err(CliError::Config(format!(
            "{} was built with vocabulary {h}, got {}",
            what.display(),
            vocab.content_hash()
        ))),
        _ => Ok(()),
    }
}

pub fn dispatch(cmd: &Command, s: &Settings, argv: Vec<String>) -> Result<()> {
    match cmd {
        Command::Extract { input, output } => extract(input, output, argv),
        Command::Vocab { corpus, output } => vocab(corpus, output, s, argv),
        Command::Pretrain {
            corpus,
            vocab,
            output,
            trace,
        } => pretrain_cmd(corpus, vocab, output, trace.as_deref(), s, argv),
        Command::Train {
            data,
            vocab,
            encoder,
            output,
            trace,
        } => train(data, vocab, encoder, output, trace.as_deref(), s, argv),
        Command::Eval {
            data,
            output,
            model,
            vocab,
            predictions,
        } => eval(data, output, model.as_deref(), vocab.as_deref(), predictions.as_deref(), s, argv),
        Command::Predict {
            data,
            vocab,
            model,
            output,
        } => predict(data, vocab, model, output, s, argv),
        Command::Synth {
            kind,
            count,
            rare,
            rare_count,
            p_common,
            output,
        } => synth_cmd(*kind, *count, rare, *rare_count, *p_common, output, s, argv),
        Command::Split { input, train, eval } => split_cmd(input, train, eval, s, argv),
    }
}

fn extract(input: &Path, output: &Path, argv: Vec<String>) -> Result<()> {
    let mut m = ManifestBuilder::new("extract", argv);
    let contracts = load_contracts(input)?;
    let mut records = Vec::new();
    for c in &contracts {
        let units = contract_to_units(c).map_err(|source| CliError::Parse {
            id: c.id.clone(),
            source,
        })?;
        records.extend(units.into_iter().map(|u: FunctionUnit| UnitRecord {
            id: c.id.clone(),
            ordinal: u.ordinal,
            name: u.name,
            code: u.code,
        }));
    }
    write_text(output, &units_jsonl(&records))?;
    m.input(input).output(output).config("contracts", contracts.len()).config("units", records.len());
    m.finish()?;
    Ok(())
}

fn vocab(units: &Path, output: &Path, s: &Settings, argv: Vec<String>) -> Result<()> {
    let mut m = ManifestBuilder::new("vocab", argv);
    let records = read_units(units)?;
    let size = s.get_or("vocab_size", DEFAULT_VOCAB_SIZE)?;
    let v = train_vocab_from_texts(records.iter().map(|u| u.code.as_str()), size)?;
    write_text(output, &v.to_text())?;
    m.input(units)
        .output(output)
        .config("vocab_size", size)
        .config("trained_size", v.size())
        .config("vocab_hash", v.content_hash());
    m.finish()?;
    Ok(())
}

fn encoder_config(s: &Settings, vocab_size: usize) -> Result<EncoderConfig> {
    let mut cfg = EncoderConfig::desk(vocab_size);
    s.apply("layers", &mut cfg.layers)?;
    s.apply("dim", &mut cfg.dim)?;
    s.apply("heads", &mut cfg.heads)?;
    s.apply("ffn_mult", &mut cfg.ffn_mult)?;
    s.apply("max_len", &mut cfg.max_len)?;
    s.apply("tie_head", &mut cfg.tie_head)?;
    cfg.validate()?;
    Ok(cfg)
}

fn pretrain_config(s: &Settings, seed: u64) -> Result<PretrainConfig> {
    let mut cfg = PretrainConfig::new(seed);
    s.apply("epochs", &mut cfg.epochs)?;
    s.apply("batch", &mut cfg.batch_size)?;
    s.apply("lr", &mut cfg.lr)?;
    s.apply("weight_decay", &mut cfg.weight_decay)?;
    s.apply("mask_rate", &mut cfg.mask_rate)?;
    if let Some(steps) = s.get("steps")? {
        cfg.max_steps = Some(steps);
    }
    Ok(cfg)
}

fn pretrain_cmd(units: &Path, vocab: &Path, output: &Path, trace: Option<&Path>, s: &Settings, argv: Vec<String>) -> Result<()> {
    let mut m = ManifestBuilder::new("pretrain", argv);
    let seed = s.seed()?;
    let records = read_units(units)?;
    let v = load_vocab(vocab)?;
    let enc_cfg = encoder_config(s, v.size())?;
    let pre_cfg = pretrain_config(s, seed)?;
    let seqs: Vec<_> = records.iter().map(|u| encode(&u.code, &v, enc_cfg.max_len)).collect();
    let init = EncoderParams::init(&enc_cfg, rng::derive(seed, &[40]))?;
    let out = pretrain(init, &seqs, &pre_cfg)?;
    let mut ck = Checkpoint::from_encoder(&out.params);
    ck.config["vocab_hash"] = json!(v.content_hash());
    ck.config["pretrain"] = serde_json::to_value(&pre_cfg)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ck.save(output)?;
    m.input(units).input(vocab).output(output).checkpoint(output);
    if let Some(t) = trace {
        let mut csv = String::from("step,loss\n");
        for (i, l) in out.losses.iter().enumerate() {
            csv.push_str(&format!("{i},{l}\n"));
        }
        write_text(t, &csv)?;
        m.output(t);
    }
    m.seed("seed", seed)
        .config("encoder", &enc_cfg)
        .config("pretrain", &pre_cfg)
        .config("steps_taken", out.losses.len())
        .config("final_loss", out.losses.last());
    m.finish()?;
    Ok(())
}

fn train_config(s: &Settings, seed: u64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::desk(seed);
    s.apply("phase1_lr", &mut cfg.phase1_lr)?;
    s.apply("phase2_lr", &mut cfg.phase2_lr)?;
    s.apply("batch_size", &mut cfg.batch_size)?;
    s.apply("chunks", &mut cfg.chunks)?;
    s.apply("epochs_per_chunk", &mut cfg.epochs_per_chunk)?;
    s.apply("rounds", &mut cfg.rounds)?;
    s.apply("per_class", &mut cfg.per_class)?;
    s.apply("phase2_batch", &mut cfg.phase2_batch)?;
    s.apply("phase2_epochs", &mut cfg.phase2_epochs)?;
    cfg.focal = FocalParams::new(s.get_or("gamma", cfg.focal.gamma)?, s.get_or("alpha", cfg.focal.alpha)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train(
    data: &Path,
    vocab: &Path,
    encoder: &Path,
    output: &Path,
    trace: Option<&Path>,
    s: &Settings,
    argv: Vec<String>,
) -> Result<()> {
    let mut m = ManifestBuilder::new("train", argv);
    let seed = s.seed()?;
    let contracts = load_contracts(data)?;
    let v = load_vocab(vocab)?;
    let enc_ck = load_checkpoint(encoder)?;
    check_vocab(&enc_ck, &v, encoder)?;
    let enc = enc_ck.encoder()?;
    let mut cls_cfg = ClassifierConfig::desk(enc.config.dim);
    s.apply("units", &mut cls_cfg.units)?;
    s.apply("l_cap", &mut cls_cfg.l_cap)?;
    s.apply("dropout", &mut cls_cfg.dropout)?;
    cls_cfg.validate()?;
    let cfg = train_config(s, seed)?;
    let init = ClassifierParams::init(&cls_cfg, rng::derive(seed, &[30]))?;
    let mut feat = Featurizer::new(&enc, &v, cls_cfg.l_cap, true);
    let out = train_two_phase(init, &mut feat, &contracts, &cfg)?;
    let ck = Checkpoint::from_model(
        &enc,
        &out.params,
        json!({ "vocab_hash": v.content_hash(), "train": cfg, "encoder_checkpoint": enc_ck.content_hash() }),
    );
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ck.save(output)?;
    m.input(data).input(vocab).input(encoder).checkpoint(encoder).output(output).checkpoint(output);
    if let Some(t) = trace {
        write_text(t, &loss_trace_csv(&out.trace))?;
        m.output(t);
    }
    m.seed("seed", seed)
        .seed("classifier_init", rng::derive(seed, &[30]))
        .config("classifier", &cls_cfg)
        .config("train", &cfg)
        .config("steps", out.trace.len())
        .config("final_loss", out.trace.last().map(|r| r.loss));
    m.finish()?;
    Ok(())
}

struct Model {
    encoder: EncoderParams,
    classifier: ClassifierParams,
}

fn load_model(model: &Path, vocab: &Vocabulary) -> Result<Model> {
    let ck = load_checkpoint(model)?;
    check_vocab(&ck, vocab, model)?;
    Ok(Model {
        encoder: ck.encoder()?,
        classifier: ck.classifier()?,
    })
}

fn run_model(model: &Model, vocab: &Vocabulary, contracts: &[SourceContract]) -> Result<Vec<Vec<f64>>> {
    let mut feat = Featurizer::new(&model.encoder, vocab, model.classifier.config.l_cap, false);
    Ok(predict_all(&model.classifier, &mut feat, contracts)?)
}

fn read_predictions(path: &Path, truths: &[SourceContract]) -> Result<Vec<IntentLabelVector>> {
    require(path)?;
    let text = fs::read_to_string(path)?;
    let mut by_id = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: PredictionLine = serde_json::from_str(line).map_err(|source| sinn_core::Error::Json { line: i + 1, source })?;
        if p.labels.len() != NUM_CLASSES || p.labels.iter().any(|&b| b > 1) {
            return Err(sinn_core::Error::LabelArity {
                line: i + 1,
                got: p.labels.len(),
            }
            .into());
        }
        let mut bits = [false; NUM_CLASSES];
        for (b, &v) in bits.iter_mut().zip(&p.labels) {
            *b = v == 1;
        }
        by_id.insert(p.id, IntentLabelVector(bits));
    }
    truths
        .iter()
        .map(|c| by_id.get(&c.id).copied().ok_or_else(|| anyhow::anyhow!("no prediction for contract {}", c.id)))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn eval(
    data: &Path,
    output: &Path,
    model: Option<&Path>,
    vocab: Option<&Path>,
    predictions: Option<&Path>,
    s: &Settings,
    argv: Vec<String>,
) -> Result<()> {
    let mut m = ManifestBuilder::new("eval", argv);
    let threshold = s.threshold()?;
    let truths = load_contracts(data)?;
    m.input(data);
    let preds = match (predictions, model, vocab) {
        (Some(p), _, _) => {
            m.input(p);
            read_predictions(p, &truths)?
        }
        (None, Some(model_path), Some(vocab_path)) => {
            let v = load_vocab(vocab_path)?;
            let model = load_model(model_path, &v)?;
            m.input(vocab_path).input(model_path).checkpoint(model_path);
            run_model(&model, &v, &truths)?.iter().map(|p| binarize(p, threshold)).collect()
        }
        _ => return Err(CliError::Config("eval needs --predictions or both --model and --vocab".into()).into()),
    };
    let labels: Vec<IntentLabelVector> = truths.iter().map(|c| c.labels).collect();
    let report = MetricReport::new(&confusion(&preds, &labels)?, threshold);
    let csv_path = output.with_extension("csv");
    write_text(output, &report.to_json())?;
    write_text(&csv_path, &report.to_csv()?)?;
    m.output(output).output(&csv_path).config("threshold", threshold);
    m.finish()?;
    Ok(())
}

fn predict(data: &Path, vocab: &Path, model: &Path, output: &Path, s: &Settings, argv: Vec<String>) -> Result<()> {
    let mut m = ManifestBuilder::new("predict", argv);
    let threshold = s.threshold()?;
    let contracts = load_contracts(data)?;
    let v = load_vocab(vocab)?;
    let model_params = load_model(model, &v)?;
    let probs = run_model(&model_params, &v, &contracts)?;
    let mut text = String::new();
    for (c, p) in contracts.iter().zip(probs) {
        let rec = PredictionRecord {
            id: c.id.clone(),
            prediction: PredictionVector {
                labels: binarize(&p, threshold),
                probs: p,
                threshold,
            },
        };
        text.push_str(&serde_json::to_string(&rec)?);
        text.push('\n');
    }
    write_text(output, &text)?;
    m.input(data).input(vocab).input(model).checkpoint(model).output(output).config("threshold", threshold);
    m.finish()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth_cmd(
    kind: SynthKind,
    count: usize,
    rare: &str,
    rare_count: Option<usize>,
    p_common: f64,
    output: &Path,
    s: &Settings,
    argv: Vec<String>,
) -> Result<()> {
    let mut m = ManifestBuilder::new("synth", argv);
    let seed = s.seed()?;
    if count == 0 {
        return Err(CliError::Config("count must be at least 1".into()).into());
    }
    let text = match kind {
        SynthKind::Sample => to_jsonl_string(&[synth::sample_contract()]),
        SynthKind::Separable => to_jsonl_string(&synth::separable_contracts(count, seed)),
        SynthKind::Skewed => {
            let intent = Intent::from_name(rare).ok_or_else(|| CliError::Config(format!("unknown intent {rare:?}")))?;
            if !(0.0..=1.0).contains(&p_common) {
                return Err(CliError::Config(format!("p_common {p_common} outside [0, 1]")).into());
            }
            let rc = rare_count.unwrap_or((count / 50).max(1));
            m.config("rare", intent.name()).config("rare_count", rc).config("p_common", p_common);
            to_jsonl_string(&synth::skewed_contracts(count, intent, rc, p_common, seed))
        }
        SynthKind::Mlm => {
            let units: Vec<UnitRecord> = synth::mlm_corpus(count, seed)
                .into_iter()
                .map(|u| UnitRecord {
                    id: format!("mlm{}", u.ordinal),
                    ordinal: 0,
                    name: u.name,
                    code: u.code,
                })
                .collect();
            units_jsonl(&units)
        }
    };
    write_text(output, &text)?;
    m.output(output).seed("seed", seed).config("kind", format!("{kind:?}")).config("count", count);
    m.finish()?;
    Ok(())
}

fn split_cmd(input: &Path, train_out: &Path, eval_out: &Path, s: &Settings, argv: Vec<String>) -> Result<()> {
    let mut m = ManifestBuilder::new("split", argv);
    let seed = s.seed()?;
    let fraction = s.get_or("eval_fraction", 0.2)?;
    let contracts = load_contracts(input)?;
    let parts = split(&contracts, fraction, seed)?;
    write_text(train_out, &to_jsonl_string(&parts.train))?;
    write_text(eval_out, &to_jsonl_string(&parts.eval))?;
    m.input(input)
        .output(train_out)
        .output(eval_out)
        .seed("seed", seed)
        .config("eval_fraction", fraction);
    m.finish()?;
    Ok(())
}
