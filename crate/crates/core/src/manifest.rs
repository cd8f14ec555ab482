//! Program manifests: a digest of every workload, benign program and known
//! attack admitted to the training phase.
//!
//! Format (line oriented, `#` starts a comment):
//!
//! ```text
//! digest=sha256
//! gcc<TAB>benign<TAB>9f86d081884c7d65...
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DIGEST_ALGORITHM: &str = "sha256";
const DIGEST_HEX_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProgramRole {
    Workload,
    Benign,
    Attack,
}

impl ProgramRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ProgramRole::Workload => "workload",
            ProgramRole::Benign => "benign",
            ProgramRole::Attack => "attack",
        }
    }
}

impl FromStr for ProgramRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "workload" => Ok(ProgramRole::Workload),
            "benign" => Ok(ProgramRole::Benign),
            "attack" => Ok(ProgramRole::Attack),
            other => Err(Error::Parse(format!("unknown program role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub role: ProgramRole,
    pub digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Pass,
    DigestMismatch,
    UnknownProgram,
}

impl fmt::Display for Verification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verification::Pass => "pass",
            Verification::DigestMismatch => "digest-mismatch",
            Verification::UnknownProgram => "unknown-program",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProgramManifest {
    entries: BTreeMap<String, ManifestEntry>,
}

/// Lowercase hex digest of `bytes` under the manifest algorithm.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_digest(s: &str) -> bool {
    s.len() == DIGEST_HEX_LEN && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl ProgramManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: ManifestEntry) -> Result<()> {
        if !valid_digest(&entry.digest) {
            return Err(Error::Parse(format!("invalid digest for `{}`", entry.name)));
        }
        if self.entries.contains_key(&entry.name) {
            return Err(Error::Parse(format!("duplicate program `{}`", entry.name)));
        }
        self.entries.insert(entry.name.clone(), entry);
        Ok(())
    }

    /// Records `bytes` under `name`.
    pub fn add_program(&mut self, name: &str, role: ProgramRole, bytes: &[u8]) -> Result<()> {
        self.insert(ManifestEntry { name: name.into(), role, digest: digest_hex(bytes) })
    }

    pub fn get(&self, name: &str) -> Option<&ManifestEntry> {
        self.entries.get(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = ProgramManifest::new();
        let mut seen_algorithm = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            if !seen_algorithm {
                let algo = line
                    .trim()
                    .strip_prefix("digest=")
                    .ok_or_else(|| Error::Parse(format!("line {}: expected `digest=<algorithm>`", i + 1)))?;
                if algo != DIGEST_ALGORITHM {
                    return Err(Error::Parse(format!("unsupported digest algorithm `{algo}`")));
                }
                seen_algorithm = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected name<TAB>role<TAB>digest", i + 1)));
            }
            manifest.insert(ManifestEntry {
                name: fields[0].to_string(),
                role: fields[1].parse()?,
                digest: fields[2].to_string(),
            })?;
        }
        if !seen_algorithm {
            return Err(Error::Parse("manifest has no `digest=` line".into()));
        }
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("digest={DIGEST_ALGORITHM}\n");
        for e in self.entries.values() {
            out.push_str(&format!("{}\t{}\t{}\n", e.name, e.role.as_str(), e.digest));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Checks a program binary against its manifest entry.
pub fn verify_manifest(program_bytes: &[u8], name: &str, manifest: &ProgramManifest) -> Verification {
    match manifest.get(name) {
        None => Verification::UnknownProgram,
        Some(entry) if entry.digest == digest_hex(program_bytes) => Verification::Pass,
        Some(_) => Verification::DigestMismatch,
    }
}
