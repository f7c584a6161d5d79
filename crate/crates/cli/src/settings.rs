//! Run settings merged from a `key = value` config file and command-line
//! flags. Flags win over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Every key a config file or `--set` may name.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threshold",
    "gamma",
    "alpha",
    "l_cap",
    "vocab_size",
    "layers",
    "dim",
    "heads",
    "units",
    "ffn_mult",
    "max_len",
    "tie_head",
    "steps",
    "epochs",
    "batch",
    "lr",
    "weight_decay",
    "mask_rate",
    "dropout",
    "phase1_lr",
    "phase2_lr",
    "batch_size",
    "chunks",
    "epochs_per_chunk",
    "rounds",
    "per_class",
    "phase2_batch",
    "phase2_epochs",
    "eval_fraction",
];

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines. `#` starts a comment; blank lines are
    /// ignored; values may be wrapped in double quotes.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", i + 1)))?;
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(v);
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingArtifact(path.to_path_buf()))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = normalize(key);
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown setting {key:?}")));
        }
        self.values.insert(key, value.trim().to_string());
        Ok(())
    }

    /// Parses `key=value` as given to `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {pair:?}")))?;
        self.set(k, v)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("setting {key}: cannot parse {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Overwrites `slot` when the key is present.
    pub fn apply<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<(), CliError> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")?
            .ok_or_else(|| CliError::Config("a seed is required (--seed or seed = in the config file)".into()))
    }

    pub fn threshold(&self) -> Result<f64, CliError> {
        let t = self.get_or("threshold", 0.5)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Config(format!("threshold {t} outside [0, 1]")));
        }
        Ok(t)
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_quotes_and_dashes() {
        let s = Settings::parse("# run\nseed = 7\nl-cap=\"12\"  # inline\n\nalpha = 0.5\n").unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(s.get::<usize>("l_cap").unwrap(), Some(12));
        assert_eq!(s.get::<f64>("alpha").unwrap(), Some(0.5));
        assert_eq!(s.get::<f64>("gamma").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(Settings::parse("sede = 1").is_err());
        assert!(Settings::parse("seed 1").is_err());
        let s = Settings::parse("seed = x").unwrap();
        assert!(s.seed().is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(Settings::default().seed().is_err());
    }

    #[test]
    fn threshold_range() {
        let mut s = Settings::default();
        assert_eq!(s.threshold().unwrap(), 0.5);
        s.set("threshold", "1.5").unwrap();
        assert!(s.threshold().is_err());
    }
}
