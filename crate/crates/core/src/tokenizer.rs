//! Byte-level BPE with five reserved special tokens.
//!
//! Id layout: `0..5` specials, `5..261` the raw bytes `0x00..=0xFF`, then one
//! id per learned merge in training order. Because every byte has an id,
//! encoding is total and never needs `[UNK]`.
//!
//! Vocabulary file:
//!
//! ```text
//! BPEv1 <V>
//! <left hex> <right hex>     one merge per line, in rank order
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extractor::FunctionUnit;

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;
pub const NUM_SPECIAL: u32 = 5;
pub const BYTE_BASE: u32 = NUM_SPECIAL;
/// Specials plus the 256 byte tokens.
pub const MIN_VOCAB: usize = 261;
pub const MAX_SEQ_LEN: usize = 512;
pub const DEFAULT_VOCAB_SIZE: usize = 2048;

const SPECIAL_NAMES: [&str; 5] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];

#[derive(Clone, Debug)]
pub struct Vocabulary {
    /// Byte expansion per id; empty for specials.
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    token_to_id: HashMap<Vec<u8>, u32>,
}

/// `[CLS] content.. [SEP]`, at most 512 ids, never containing `[PAD]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    /// Wraps raw ids, checking the framing invariants.
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.len() < 2 || ids[0] != CLS || *ids.last().unwrap() != SEP {
            return Err(Error::Shape("token sequence must be framed by [CLS] .. [SEP]".into()));
        }
        if ids.len() > MAX_SEQ_LEN {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: MAX_SEQ_LEN,
            });
        }
        if ids.contains(&PAD) {
            return Err(Error::Shape("token sequence contains [PAD]".into()));
        }
        Ok(TokenSequence(ids))
    }

    /// Replaces the id at `pos`; used by masking, which never targets the
    /// framing tokens.
    pub(crate) fn with_replaced(&self, positions: &[usize], id: u32) -> TokenSequence {
        let mut ids = self.0.clone();
        for &p in positions {
            ids[p] = id;
        }
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Vocabulary {
    pub fn byte_level() -> Self {
        let mut tokens = vec![Vec::new(); NUM_SPECIAL as usize];
        let mut token_to_id = HashMap::new();
        for b in 0..=255u8 {
            token_to_id.insert(vec![b], BYTE_BASE + b as u32);
            tokens.push(vec![b]);
        }
        Vocabulary {
            tokens,
            merges: Vec::new(),
            ranks: HashMap::new(),
            token_to_id,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.token_to_id.get(bytes).copied()
    }

    /// Human-readable form of a token, for debugging.
    pub fn token_repr(&self, id: u32) -> String {
        match self.tokens.get(id as usize) {
            Some(_) if id < NUM_SPECIAL => SPECIAL_NAMES[id as usize].to_string(),
            Some(b) => String::from_utf8_lossy(b).into_owned(),
            None => format!("<{id}?>"),
        }
    }

    fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let id = self.tokens.len() as u32;
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        self.ranks.insert((left, right), self.merges.len() as u32);
        self.merges.push((left, right));
        self.token_to_id.insert(bytes.clone(), id);
        self.tokens.push(bytes);
        id
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("BPEv1 {}\n", self.size());
        for &(l, r) in &self.merges {
            let _ = writeln!(
                out,
                "{} {}",
                hex::encode(&self.tokens[l as usize]),
                hex::encode(&self.tokens[r as usize])
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::VocabFormat("empty file".into()))?;
        let declared: usize = header
            .strip_prefix("BPEv1 ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::VocabFormat(format!("bad header {header:?}")))?;
        let mut vocab = Vocabulary::byte_level();
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::VocabFormat(format!("merge line {} malformed", k + 2)))?;
            let decode = |h: &str| {
                hex::decode(h).map_err(|e| Error::VocabFormat(format!("merge line {}: {e}", k + 2)))
            };
            let (lb, rb) = (decode(l)?, decode(r)?);
            let lookup = |b: &[u8]| {
                vocab
                    .id_of(b)
                    .ok_or_else(|| Error::VocabFormat(format!("merge line {} references unknown token", k + 2)))
            };
            let (li, ri) = (lookup(&lb)?, lookup(&rb)?);
            vocab.push_merge(li, ri);
        }
        if vocab.size() != declared {
            return Err(Error::VocabFormat(format!(
                "header declares {declared} tokens, merges yield {}",
                vocab.size()
            )));
        }
        Ok(vocab)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Content ids for `bytes`: repeatedly merge the lowest-ranked adjacent
    /// pair, left to right. Equivalent to applying every merge in rank order.
    fn apply_merges(&self, bytes: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = bytes.iter().map(|&b| BYTE_BASE + b as u32).collect();
        if self.merges.is_empty() {
            return ids;
        }
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).copied())
                .min();
            let Some(rank) = best else { break };
            let (l, r) = self.merges[rank as usize];
            let merged = NUM_SPECIAL + 256 + rank;
            ids = merge_pair(&ids, l, r, merged);
        }
        ids
    }
}

fn merge_pair(ids: &[u32], l: u32, r: u32, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
            out.push(merged);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

/// Learns `target_size - 261` merges from the function corpus, most frequent
/// adjacent pair first, ties going to the lexicographically smaller byte
/// pair. Pairs never span two functions. Training stops early if the corpus
/// runs out of adjacent pairs.
pub fn train_vocab(corpus: &[FunctionUnit], target_size: usize) -> Result<Vocabulary> {
    train_vocab_from_texts(corpus.iter().map(|u| u.code.as_str()), target_size)
}

pub fn train_vocab_from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<Vocabulary> {
    if target_size < MIN_VOCAB {
        return Err(Error::VocabTooSmall(target_size));
    }
    let mut words: Vec<Vec<u32>> = texts
        .into_iter()
        .map(|t| t.bytes().map(|b| BYTE_BASE + b as u32).collect())
        .collect();
    if words.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut vocab = Vocabulary::byte_level();
    while vocab.size() < target_size {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for w in &words {
            for p in w.windows(2) {
                *counts.entry((p[0], p[1])).or_default() += 1;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (vocab.token_bytes(pa.0), vocab.token_bytes(pa.1));
                let kb = (vocab.token_bytes(pb.0), vocab.token_bytes(pb.1));
                // Smaller pair wins the tie, so it must compare as "greater".
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), _)) = best else { break };
        let merged = vocab.push_merge(l, r);
        for w in &mut words {
            if w.len() >= 2 {
                *w = merge_pair(w, l, r, merged);
            }
        }
    }
    Ok(vocab)
}

/// `[CLS] merges(text) [SEP]`, tail-truncating content to fit `max_len`.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
    let max_len = max_len.min(MAX_SEQ_LEN);
    let mut content = vocab.apply_merges(text.as_bytes());
    content.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(content.len() + 2);
    ids.push(CLS);
    ids.extend(content);
    ids.push(SEP);
    TokenSequence(ids)
}

pub fn decode_bytes(ids: &[u32], vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for &id in ids {
        let bytes = vocab.token_bytes(id).ok_or(Error::TokenOutOfRange {
            id,
            size: vocab.size(),
        })?;
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

/// Inverse of [`encode`] on the content region; special tokens are dropped.
/// Invalid UTF-8 (possible only after truncation) is replaced lossily.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<String> {
    let bytes = decode_bytes(ids, vocab)?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
    })
}
