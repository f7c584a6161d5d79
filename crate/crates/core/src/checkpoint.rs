//! Versioned binary container for named f64 tensors.
//!
//! Layout:
//!
//! ```text
//! SINNv2 1\n
//! config <byte-len>\n<JSON>\n
//! tensors <count>\n
//! then per tensor, names in lexicographic order:
//! <name> <ndim> <dim>...\n<little-endian f64 payload>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::classifier::{ClassifierConfig, ClassifierParams};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::tensor::{NamedTensors, Tensor};

pub const MAGIC: &str = "SINNv2";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// JSON object; `encoder` and `classifier` keys hold the model configs.
    pub config: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(config: Value) -> Self {
        Checkpoint {
            config,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert_all<P: NamedTensors>(&mut self, params: &P) {
        for (name, t) in params.named() {
            self.tensors.insert(name, t.clone());
        }
    }

    pub fn from_encoder(params: &EncoderParams) -> Self {
        let mut c = Checkpoint::new(serde_json::json!({ "encoder": params.config }));
        c.insert_all(params);
        c
    }

    /// Encoder and classifier tensors together, so a single file serves
    /// evaluation and prediction.
    pub fn from_model(encoder: &EncoderParams, classifier: &ClassifierParams, extra: Value) -> Self {
        let mut config = serde_json::json!({
            "encoder": encoder.config,
            "classifier": classifier.config,
        });
        if let (Value::Object(dst), Value::Object(src)) = (&mut config, extra) {
            dst.extend(src);
        }
        let mut c = Checkpoint::new(config);
        c.insert_all(encoder);
        c.insert_all(classifier);
        c
    }

    fn prefixed(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn encoder(&self) -> Result<EncoderParams> {
        let cfg: EncoderConfig = serde_json::from_value(self.config["encoder"].clone())
            .map_err(|e| Error::Checkpoint(format!("encoder config: {e}")))?;
        EncoderParams::from_tensors(cfg, self.prefixed("enc."))
    }

    pub fn classifier(&self) -> Result<ClassifierParams> {
        let cfg: ClassifierConfig = serde_json::from_value(self.config["classifier"].clone())
            .map_err(|e| Error::Checkpoint(format!("classifier config: {e}")))?;
        ClassifierParams::from_tensors(cfg, self.prefixed("cls."))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(format!("{MAGIC} {FORMAT_VERSION}\n").as_bytes());
        out.extend_from_slice(format!("config {}\n", config.len()).as_bytes());
        out.extend_from_slice(&config);
        out.push(b'\n');
        out.extend_from_slice(format!("tensors {}\n", self.tensors.len()).as_bytes());
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            out.extend_from_slice(format!("{name} {} {}\n", dims.len(), dims.join(" ")).as_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = r.line()?;
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| Error::Checkpoint("missing SINNv2 header".into()))?;
        if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
            return Err(Error::Checkpoint(format!("unsupported format version {version:?}")));
        }
        let len = r.counted("config")?;
        let config: Value =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("config JSON: {e}")))?;
        if r.take(1)? != b"\n" {
            return Err(Error::Checkpoint("config not newline-terminated".into()));
        }
        let count = r.counted("tensors")?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let line = r.line()?;
            let mut parts = line.split(' ');
            let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| bad("tensor name"))?.to_string();
            let ndim: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("tensor rank"))?;
            let shape: Vec<usize> = parts.map(|v| v.parse().map_err(|_| bad("tensor dim"))).collect::<Result<_>>()?;
            if shape.len() != ndim {
                return Err(Error::Checkpoint(format!("tensor {name}: rank {ndim} vs {} dims", shape.len())));
            }
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(8).ok_or_else(|| bad("tensor size"))?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

fn bad(what: &str) -> Error {
    Error::Checkpoint(format!("malformed {what}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("length (truncated)"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("line (truncated)"))?;
        let s = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header text"))?;
        self.pos += nl + 1;
        Ok(s)
    }

    fn counted(&mut self, key: &str) -> Result<usize> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(key))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(serde_json::json!({"k": 1}));
        c.tensors.insert("b".into(), Tensor::from_vec(&[2], vec![1.5, -0.0]).unwrap());
        c.tensors.insert("a.w".into(), Tensor::from_vec(&[1, 3], vec![f64::MIN_POSITIVE, 2.0, 3.0]).unwrap());
        c
    }

    #[test]
    fn header_and_order() {
        let bytes = sample().to_bytes();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("SINNv2 1\nconfig 7\n{\"k\":1}\ntensors 2\na.w 2 1 3\n"));
        let b_at = text.find("b 1 2\n").unwrap();
        assert!(b_at > text.find("a.w").unwrap());
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!(back.tensors["b"].data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut wrong = bytes.clone();
        wrong[7] = b'9';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        assert!(Checkpoint::from_bytes(b"SINNv1 1\n").is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.sinn");
        let c = sample();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
        assert_eq!(sha256_file(&p).unwrap(), c.content_hash());
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_roundtrip(vals in proptest::collection::vec(any::<f64>(), 1..40)) {
            let mut c = Checkpoint::new(serde_json::json!({}));
            let n = vals.len();
            c.tensors.insert("x".into(), Tensor::from_vec(&[n], vals).unwrap());
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), c.to_bytes());
        }
    }
}
