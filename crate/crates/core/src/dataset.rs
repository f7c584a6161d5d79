//! Labeled contract datasets: JSONL ingest, seeded train/eval splits and the
//! class-balanced sampler used by the second training phase.
//!
//! Wire format, one object per line:
//! `{"id": "0x..", "source": "contract T { .. }", "labels": [0,1,0,0,0,0,0,0,0,0]}`

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{index, IndexedRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intent {
    Fee,
    DisableTrading,
    Blacklist,
    Reflect,
    MaxTX,
    Mint,
    Honeypot,
    Reward,
    Rebase,
    MaxSell,
}

impl Intent {
    pub const ALL: [Intent; NUM_CLASSES] = [
        Intent::Fee,
        Intent::DisableTrading,
        Intent::Blacklist,
        Intent::Reflect,
        Intent::MaxTX,
        Intent::Mint,
        Intent::Honeypot,
        Intent::Reward,
        Intent::Rebase,
        Intent::MaxSell,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Intent::Fee => "Fee",
            Intent::DisableTrading => "DisableTrading",
            Intent::Blacklist => "Blacklist",
            Intent::Reflect => "Reflect",
            Intent::MaxTX => "MaxTX",
            Intent::Mint => "Mint",
            Intent::Honeypot => "Honeypot",
            Intent::Reward => "Reward",
            Intent::Rebase => "Rebase",
            Intent::MaxSell => "MaxSell",
        }
    }

    pub fn from_name(name: &str) -> Option<Intent> {
        Intent::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ten intent bits in canonical [`Intent::ALL`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct IntentLabelVector(pub [bool; NUM_CLASSES]);

impl IntentLabelVector {
    pub fn from_intents(intents: &[Intent]) -> Self {
        let mut bits = [false; NUM_CLASSES];
        for i in intents {
            bits[i.index()] = true;
        }
        IntentLabelVector(bits)
    }

    pub fn get(&self, c: Intent) -> bool {
        self.0[c.index()]
    }

    pub fn bits(&self) -> &[bool; NUM_CLASSES] {
        &self.0
    }

    pub fn as_u8(&self) -> [u8; NUM_CLASSES] {
        self.0.map(u8::from)
    }

    pub fn intents(&self) -> Vec<Intent> {
        Intent::ALL.into_iter().filter(|c| self.get(*c)).collect()
    }
}

impl Serialize for IntentLabelVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_u8().serialize(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceContract {
    pub id: String,
    pub source: String,
    pub labels: IntentLabelVector,
}

#[derive(Serialize, Deserialize)]
struct ContractRecord<'a> {
    id: std::borrow::Cow<'a, str>,
    source: std::borrow::Cow<'a, str>,
    labels: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<SourceContract>,
    pub eval: Vec<SourceContract>,
    pub seed: u64,
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Vec<SourceContract>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses contracts from any line reader. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<SourceContract>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ContractRecord = serde_json::from_str(&line).map_err(|source| Error::Json {
            line: line_no,
            source,
        })?;
        if rec.labels.len() != NUM_CLASSES {
            return Err(Error::LabelArity {
                line: line_no,
                got: rec.labels.len(),
            });
        }
        let mut bits = [false; NUM_CLASSES];
        for (b, &v) in bits.iter_mut().zip(&rec.labels) {
            *b = match v {
                0 => false,
                1 => true,
                value => return Err(Error::LabelValue { line: line_no, value }),
            };
        }
        if rec.id.is_empty() {
            return Err(Error::EmptyField {
                line: line_no,
                field: "id",
            });
        }
        if rec.source.is_empty() {
            return Err(Error::EmptyField {
                line: line_no,
                field: "source",
            });
        }
        if !seen.insert(rec.id.to_string()) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: rec.id.into_owned(),
            });
        }
        out.push(SourceContract {
            id: rec.id.into_owned(),
            source: rec.source.into_owned(),
            labels: IntentLabelVector(bits),
        });
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut w: W, contracts: &[SourceContract]) -> std::io::Result<()> {
    for c in contracts {
        let rec = ContractRecord {
            id: c.id.as_str().into(),
            source: c.source.as_str().into(),
            labels: c.labels.0.iter().map(|&b| u64::from(b)).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl_string(contracts: &[SourceContract]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, contracts).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Seeded partition into train and eval. Each side keeps input order.
pub fn split(data: &[SourceContract], eval_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidFraction(eval_fraction));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len();
    let n_eval = (eval_fraction * n as f64).round() as usize;
    let mut r = rng::seeded(seed);
    let mut is_eval = vec![false; n];
    for i in index::sample(&mut r, n, n_eval) {
        is_eval[i] = true;
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (c, e) in data.iter().zip(is_eval) {
        if e {
            eval.push(c.clone());
        } else {
            train.push(c.clone());
        }
    }
    Ok(DatasetSplit { train, eval, seed })
}

/// Indices of a class-balanced draw: `per_class` positives for every class
/// in canonical order. Classes with at least `per_class` positives are
/// sampled without replacement, scarcer classes with replacement.
pub fn balanced_indices(data: &[SourceContract], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    if per_class == 0 {
        return Err(Error::Config("per_class must be at least 1".into()));
    }
    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in Intent::ALL {
        let positives: Vec<usize> = data
            .iter()
            .enumerate()
            .filter(|(_, c)| c.labels.get(class))
            .map(|(i, _)| i)
            .collect();
        if positives.is_empty() {
            return Err(Error::NoPositives(class));
        }
        if positives.len() >= per_class {
            out.extend(index::sample(&mut r, positives.len(), per_class).into_iter().map(|k| positives[k]));
        } else {
            for _ in 0..per_class {
                out.push(*positives.choose(&mut r).expect("nonempty"));
            }
        }
    }
    Ok(out)
}

pub fn balanced_sample(data: &[SourceContract], per_class: usize, seed: u64) -> Result<Vec<SourceContract>> {
    Ok(balanced_indices(data, per_class, seed)?
        .into_iter()
        .map(|i| data[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn contract(id: &str, intents: &[Intent]) -> SourceContract {
        SourceContract {
            id: id.into(),
            source: format!("contract C{id} {{ }}"),
            labels: IntentLabelVector::from_intents(intents),
        }
    }

    #[test]
    fn ingest_single_line() {
        let line = r#"{"id":"0xA","source":"contract T { }","labels":[0,0,0,0,0,0,0,0,0,0]}"#;
        let got = parse_jsonl(line.as_bytes()).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "0xA");
        assert_eq!(got[0].source, "contract T { }");
        assert_eq!(got[0].labels, IntentLabelVector::default());
    }

    #[test]
    fn ingest_rejects_label_arity() {
        let line = r#"{"id":"0xA","source":"x","labels":[0,0,0,0,0,0,0,0,0]}"#;
        let err = parse_jsonl(line.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::LabelArity { line: 1, got: 9 }));
        assert!(err.to_string().contains("label arity"));
    }

    #[test]
    fn ingest_rejects_duplicate_id() {
        let text = concat!(
            r#"{"id":"0xA","source":"x","labels":[0,0,0,0,0,0,0,0,0,0]}"#,
            "\n",
            r#"{"id":"0xA","source":"y","labels":[0,0,0,0,0,0,0,0,0,0]}"#,
        );
        let err = parse_jsonl(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { line: 2, .. }));
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn ingest_reports_malformed_line_number() {
        let text = concat!(
            r#"{"id":"0xA","source":"x","labels":[0,0,0,0,0,0,0,0,0,0]}"#,
            "\n",
            "{not json",
        );
        assert!(matches!(parse_jsonl(text.as_bytes()), Err(Error::Json { line: 2, .. })));
    }

    #[test]
    fn ingest_rejects_empty_source() {
        let line = r#"{"id":"0xA","source":"","labels":[0,0,0,0,0,0,0,0,0,0]}"#;
        assert!(matches!(
            parse_jsonl(line.as_bytes()),
            Err(Error::EmptyField { field: "source", .. })
        ));
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let data: Vec<_> = (0..10).map(|i| contract(&i.to_string(), &[])).collect();
        let a = split(&data, 0.2, 7).unwrap();
        assert_eq!(a.train.len(), 8);
        assert_eq!(a.eval.len(), 2);
        let b = split(&data, 0.2, 7).unwrap();
        let ids = |v: &[SourceContract]| v.iter().map(|c| c.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.eval), ids(&b.eval));
        assert_eq!(ids(&a.train), ids(&b.train));
        assert!(a.eval.iter().all(|e| !a.train.iter().any(|t| t.id == e.id)));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let data = vec![contract("a", &[])];
        assert!(matches!(split(&data, 1.0, 0), Err(Error::InvalidFraction(_))));
        assert!(matches!(split(&data, 0.0, 0), Err(Error::InvalidFraction(_))));
        assert!(matches!(split(&[], 0.5, 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn balanced_sample_covers_every_positive_when_exact() {
        let mut data = Vec::new();
        for class in Intent::ALL {
            for k in 0..10 {
                data.push(contract(&format!("{class}-{k}"), &[class]));
            }
        }
        let draws = balanced_indices(&data, 10, 3).unwrap();
        assert_eq!(draws.len(), 100);
        for (ci, class) in Intent::ALL.iter().enumerate() {
            let chunk = &draws[ci * 10..(ci + 1) * 10];
            assert!(chunk.iter().all(|&i| data[i].labels.get(*class)));
        }
        let distinct: HashSet<_> = draws.iter().collect();
        assert_eq!(distinct.len(), 100);
    }

    #[test]
    fn balanced_sample_names_empty_class() {
        let data: Vec<_> = Intent::ALL
            .iter()
            .filter(|c| **c != Intent::Honeypot)
            .map(|c| contract(c.name(), &[*c]))
            .collect();
        let err = balanced_indices(&data, 10, 0).unwrap_err();
        assert!(matches!(err, Error::NoPositives(Intent::Honeypot)));
        assert!(err.to_string().contains("Honeypot"));
    }

    #[test]
    fn scarce_class_draws_with_replacement() {
        let mut data: Vec<_> = Intent::ALL
            .iter()
            .map(|c| contract(&format!("{c}-only"), &[*c]))
            .collect();
        // Fee gets two more positives: three in total.
        data.push(contract("fee-2", &[Intent::Fee]));
        data.push(contract("fee-3", &[Intent::Fee]));
        let draws = balanced_indices(&data, 10, 11).unwrap();
        let fee = &draws[..10];
        // Tally over the seeded draw: ten draws, all from the three Fee positives.
        let mut tally = std::collections::BTreeMap::new();
        for &i in fee {
            *tally.entry(data[i].id.as_str()).or_insert(0usize) += 1;
        }
        assert_eq!(tally.values().sum::<usize>(), 10);
        assert!(tally.keys().all(|k| ["Fee-only", "fee-2", "fee-3"].contains(k)));
        // Replay: the same stream yields the same multiset.
        assert_eq!(balanced_indices(&data, 10, 11).unwrap(), draws);
    }

    proptest! {
        #[test]
        fn balanced_sample_size_is_fixed(seed in any::<u64>(), per_class in 1usize..15) {
            let data: Vec<_> = Intent::ALL.iter().enumerate()
                .flat_map(|(i, c)| (0..=i).map(move |k| contract(&format!("{c}{k}"), &[*c])))
                .collect();
            let draws = balanced_indices(&data, per_class, seed).unwrap();
            prop_assert_eq!(draws.len(), per_class * NUM_CLASSES);
        }

        #[test]
        fn split_is_a_partition(n in 1usize..60, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let data: Vec<_> = (0..n).map(|i| contract(&i.to_string(), &[])).collect();
            let s = split(&data, frac, seed).unwrap();
            prop_assert_eq!(s.train.len() + s.eval.len(), n);
            prop_assert_eq!(s.eval.len(), (frac * n as f64).round() as usize);
            let mut ids: Vec<_> = s.train.iter().chain(&s.eval).map(|c| c.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }

        #[test]
        fn jsonl_roundtrip(
            rows in proptest::collection::vec(("[a-z0-9]{1,8}", "\\PC{1,40}", proptest::array::uniform10(any::<bool>())), 1..8)
        ) {
            let mut seen = HashSet::new();
            let data: Vec<_> = rows.into_iter()
                .filter(|(id, _, _)| seen.insert(id.clone()))
                .map(|(id, source, bits)| SourceContract { id, source, labels: IntentLabelVector(bits) })
                .collect();
            let text = to_jsonl_string(&data);
            prop_assert_eq!(parse_jsonl(text.as_bytes()).unwrap(), data);
        }
    }
}
