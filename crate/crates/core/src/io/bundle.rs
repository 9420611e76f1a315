use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::noise::RNG_ALGORITHM;
use crate::{Error, Result};

pub const TOOL_NAME: &str = "graphsrd";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Fixed 17-significant-digit form used in every table and summary.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleHeader {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub rng: String,
}

impl BundleHeader {
    pub fn new(config_hash: String, seed: u64) -> Self {
        BundleHeader {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            config_hash,
            seed,
            rng: RNG_ALGORITHM.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "# {} {} config_sha256={} seed={} rng={}",
            self.tool, self.version, self.config_hash, self.seed, self.rng
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Bundle(format!("malformed header line `{line}`"));
        let rest = line.strip_prefix("# ").ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(' ').collect();
        if parts.len() != 5 {
            return Err(bad());
        }
        let field = |p: &str, key: &str| p.strip_prefix(key).map(str::to_string).ok_or_else(bad);
        Ok(BundleHeader {
            tool: parts[0].into(),
            version: parts[1].into(),
            config_hash: field(parts[2], "config_sha256=")?,
            seed: field(parts[3], "seed=")?.parse().map_err(|_| bad())?,
            rng: field(parts[4], "rng=")?,
        })
    }
}

/// Named text files, each opening with the same header line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultBundle {
    header: BundleHeader,
    files: BTreeMap<String, String>,
}

impl ResultBundle {
    /// A bundle holding the normalized config it was produced from.
    pub fn new(normalized_config: &str, seed: u64) -> Self {
        let header = BundleHeader::new(sha256_hex(normalized_config), seed);
        let mut b = ResultBundle {
            header,
            files: BTreeMap::new(),
        };
        b.insert(CONFIG_FILE, normalized_config);
        b
    }

    pub fn header(&self) -> &BundleHeader {
        &self.header
    }

    pub fn insert(&mut self, name: &str, body: &str) {
        self.files
            .insert(name.to_string(), format!("{}\n{body}", self.header.line()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    /// Full file text, header included.
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(String::as_str)
    }

    /// File text after the header line.
    pub fn body(&self, name: &str) -> Option<&str> {
        self.file(name).map(|t| t.split_once('\n').map_or("", |(_, b)| b))
    }

    /// Looks up `key` in the summary file.
    pub fn summary_value(&self, key: &str) -> Option<&str> {
        self.body(SUMMARY_FILE)?
            .lines()
            .find_map(|l| l.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
    }

    /// Checks every header against the hash of the embedded config.
    pub fn verify(&self) -> Result<()> {
        let config = self
            .body(CONFIG_FILE)
            .ok_or_else(|| Error::Bundle(format!("missing {CONFIG_FILE}")))?;
        let actual = sha256_hex(config);
        if actual != self.header.config_hash {
            return Err(Error::Bundle(format!(
                "config hash mismatch: header says {}, {CONFIG_FILE} hashes to {actual}",
                self.header.config_hash
            )));
        }
        for (name, text) in &self.files {
            let first = text.lines().next().unwrap_or("");
            let h = BundleHeader::parse(first).map_err(|e| Error::Bundle(format!("{name}: {e}")))?;
            if h != self.header {
                return Err(Error::Bundle(format!(
                    "{name}: header config hash {} does not match {}",
                    h.config_hash, self.header.config_hash
                )));
            }
        }
        Ok(())
    }

    /// Rebuilds a bundle from file texts and verifies it.
    pub fn from_files(files: BTreeMap<String, String>) -> Result<Self> {
        let config = files
            .get(CONFIG_FILE)
            .ok_or_else(|| Error::Bundle(format!("missing {CONFIG_FILE}")))?;
        let header = BundleHeader::parse(config.lines().next().unwrap_or(""))?;
        let b = ResultBundle { header, files };
        b.verify()?;
        Ok(b)
    }

    /// Canonical serialization used for byte-level comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        for (name, text) in &self.files {
            out.push_str(&format!("=== {name} {}\n", text.len()));
            out.push_str(text);
        }
        out.into_bytes()
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, text) in &self.files {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    pub fn read_from(dir: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                let name = entry.file_name().to_string_lossy().into_owned();
                files.insert(name, fs::read_to_string(entry.path())?);
            }
        }
        Self::from_files(files)
    }
}

/// Flat `key=value` summary, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        self.entries.push((key.into(), value));
    }

    pub fn float(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, fmt_f64(value));
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trips() {
        let h = BundleHeader::new("ab12".into(), 77);
        assert_eq!(BundleHeader::parse(&h.line()).unwrap(), h);
    }

    #[test]
    fn tampered_config_is_detected() {
        let mut b = ResultBundle::new("task = \"validate\"\n", 3);
        b.insert("summary.txt", "valid=true\n");
        b.verify().unwrap();
        let mut files: BTreeMap<String, String> = b.names().map(|n| (n.to_string(), b.file(n).unwrap().to_string())).collect();
        let cfg = files.get_mut(CONFIG_FILE).unwrap();
        *cfg = cfg.replace("validate", "simulate");
        assert!(matches!(ResultBundle::from_files(files), Err(Error::Bundle(_))));
    }

    #[test]
    fn foreign_file_is_detected() {
        let b = ResultBundle::new("a = 1\n", 3);
        let other = ResultBundle::new("a = 2\n", 3);
        let mut files: BTreeMap<String, String> = b.names().map(|n| (n.to_string(), b.file(n).unwrap().to_string())).collect();
        files.insert("x.csv".into(), other.file(CONFIG_FILE).unwrap().to_string());
        assert!(ResultBundle::from_files(files).is_err());
    }

    #[test]
    fn float_format_has_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }
}
