//! Run manifests: what was run, with which config and seeds, and content
//! hashes of every input and output file. No timestamps, so identical runs
//! give identical manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
const HEADER: &str = "format cognisnn-manifest/1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style object hash (SHA-256 object format): the digest of
/// `"blob <len>\0"` followed by the content.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputHash {
    pub name: String,
    pub sha256: String,
    pub blob: String,
}

impl OutputHash {
    pub fn of(name: &str, bytes: &[u8]) -> Self {
        Self {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            blob: blob_hash(bytes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputHash {
    pub role: String,
    pub sha256: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputHash>,
    /// Sorted by name.
    pub outputs: Vec<OutputHash>,
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: line,
        message: format!("manifest line {line}: {}", msg.into()),
    }
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\ncommand {}\nconfig_sha256 {}\n", self.command, self.config_sha256);
        for (k, v) in &self.seeds {
            let _ = writeln!(s, "seed {k} {v}");
        }
        for i in &self.inputs {
            let _ = writeln!(s, "input {} {} {}", i.role, i.sha256, i.path.display());
        }
        for o in &self.outputs {
            let _ = writeln!(s, "output {} {} {}", o.name, o.sha256, o.blob);
        }
        s
    }

    /// Parses manifest text. Offsets in errors are line numbers.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(bad(1, "missing format header")),
        }
        let mut m = Manifest::default();
        for (n, line) in lines {
            let (key, rest) = line.split_once(' ').ok_or_else(|| bad(n, "expected `key value`"))?;
            match key {
                "command" => m.command = rest.to_string(),
                "config_sha256" => m.config_sha256 = rest.to_string(),
                "seed" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| bad(n, "expected `seed name value`"))?;
                    let v = v.parse().map_err(|_| bad(n, format!("bad seed `{v}`")))?;
                    m.seeds.insert(k.to_string(), v);
                }
                "input" => {
                    let mut parts = rest.splitn(3, ' ');
                    match (parts.next(), parts.next(), parts.next()) {
                        (Some(role), Some(sha), Some(path)) => m.inputs.push(InputHash {
                            role: role.into(),
                            sha256: sha.into(),
                            path: path.into(),
                        }),
                        _ => return Err(bad(n, "expected `input role sha256 path`")),
                    }
                }
                "output" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    let [name, sha, blob] = parts[..] else {
                        return Err(bad(n, "expected `output name sha256 blob`"));
                    };
                    m.outputs.push(OutputHash {
                        name: name.into(),
                        sha256: sha.into(),
                        blob: blob.into(),
                    });
                }
                k => return Err(bad(n, format!("unknown key `{k}`"))),
            }
        }
        if m.command.is_empty() || m.config_sha256.is_empty() {
            return Err(bad(0, "command and config hash are required"));
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)
    }
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename, so a
/// reader never sees a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, dir.join(name))?;
    Ok(())
}
