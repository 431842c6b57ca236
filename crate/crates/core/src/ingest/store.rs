//! Content-addressed corpus store.
//!
//! Layout: `<store>/<sha256>.jsonl` data files plus `<store>/manifest.json`.
//! File names are the SHA-256 of their contents, so persisting the same data
//! twice is a no-op and any bit flip is detected on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dns::ResolverObservation;
use super::IngestError;
use crate::analytics::PathCorpus;
use crate::geo::CountryCode;
use crate::pathcore::{parse_atlas_json, to_atlas_json, CountryPath, RecordContext, Traceroute};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    CountryPaths,
    Traceroutes,
    Observations,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub kind: RecordKind,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_country: Option<CountryCode>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn total_records(&self) -> usize {
        self.entries.iter().map(|e| e.records).sum()
    }
}

pub enum Persistable<'a> {
    Corpus(&'a PathCorpus),
    Traceroutes(&'a [Traceroute]),
    Observations(&'a [ResolverObservation]),
}

#[derive(Debug, Clone)]
pub struct PersistOutcome {
    pub entry: ManifestEntry,
    /// The data file and manifest entry were already present.
    pub already_persisted: bool,
    pub manifest: Manifest,
}

pub struct Store {
    dir: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

impl Store {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Store { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn load_manifest(&self) -> Result<Manifest, IngestError> {
        match std::fs::read(self.manifest_path()) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| IngestError::Integrity { file: "manifest.json".into(), message: e.to_string() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(e.into()),
        }
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), IngestError> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, self.dir.join(name))?;
        Ok(())
    }

    pub fn persist(&self, item: Persistable<'_>) -> Result<PersistOutcome, IngestError> {
        let (bytes, kind, records, label, origin_country) = match item {
            Persistable::Corpus(c) => (
                jsonl(c.paths()),
                RecordKind::CountryPaths,
                c.len(),
                Some(c.label().to_string()),
                Some(c.origin_country()),
            ),
            Persistable::Traceroutes(trs) => {
                let mut out = Vec::new();
                for tr in trs {
                    out.extend_from_slice(to_atlas_json(tr).as_bytes());
                    out.push(b'\n');
                }
                (out, RecordKind::Traceroutes, trs.len(), None, None)
            }
            Persistable::Observations(obs) => (jsonl(obs), RecordKind::Observations, obs.len(), None, None),
        };
        std::fs::create_dir_all(&self.dir)?;
        let sha = sha256_hex(&bytes);
        let file = format!("{sha}.jsonl");
        let path = self.dir.join(&file);

        let mut file_existed = false;
        match std::fs::read(&path) {
            Ok(existing) if existing == bytes => file_existed = true,
            Ok(_) => {
                return Err(IngestError::Integrity {
                    file,
                    message: "existing file with this hash has different content".into(),
                })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => self.write_atomic(&file, &bytes)?,
            Err(e) => return Err(e.into()),
        }

        let entry = ManifestEntry { file, sha256: sha, kind, records, label, origin_country };
        let mut manifest = self.load_manifest()?;
        let entry_existed = manifest.entries.contains(&entry);
        if !entry_existed {
            manifest.entries.push(entry.clone());
            manifest.entries.sort();
            let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
            text.push(b'\n');
            self.write_atomic("manifest.json", &text)?;
        }
        Ok(PersistOutcome { entry, already_persisted: file_existed && entry_existed, manifest })
    }

    /// Reads a data file and checks it against its recorded hash.
    pub fn read_verified(&self, entry: &ManifestEntry) -> Result<Vec<u8>, IngestError> {
        let bytes = std::fs::read(self.dir.join(&entry.file))?;
        let actual = sha256_hex(&bytes);
        if actual != entry.sha256 || entry.file != format!("{actual}.jsonl") {
            return Err(IngestError::Integrity {
                file: entry.file.clone(),
                message: format!("content hash {actual} does not match"),
            });
        }
        Ok(bytes)
    }

    fn lines(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
        bytes.split(|b| *b == b'\n').enumerate().filter(|(_, l)| !l.is_empty())
    }

    fn corrupt(entry: &ManifestEntry, line: usize, message: impl std::fmt::Display) -> IngestError {
        IngestError::Integrity { file: entry.file.clone(), message: format!("line {}: {message}", line + 1) }
    }

    pub fn load_corpus(&self, entry: &ManifestEntry) -> Result<PathCorpus, IngestError> {
        let bytes = self.read_verified(entry)?;
        let mut paths = Vec::with_capacity(entry.records);
        for (i, line) in Self::lines(&bytes) {
            let path: CountryPath = serde_json::from_slice(line).map_err(|e| Self::corrupt(entry, i, e))?;
            paths.push(path);
        }
        let origin = entry
            .origin_country
            .or_else(|| paths.first().map(|p| p.origin_country))
            .ok_or_else(|| Self::corrupt(entry, 0, "corpus has no origin country"))?;
        PathCorpus::new(origin, paths, entry.label.clone().unwrap_or_default()).map_err(|e| Self::corrupt(entry, 0, e))
    }

    pub fn load_traceroutes(&self, entry: &ManifestEntry) -> Result<Vec<Traceroute>, IngestError> {
        let bytes = self.read_verified(entry)?;
        Self::lines(&bytes)
            .map(|(i, line)| parse_atlas_json(line, &RecordContext::default()).map_err(|e| Self::corrupt(entry, i, e)))
            .collect()
    }

    pub fn load_observations(&self, entry: &ManifestEntry) -> Result<Vec<ResolverObservation>, IngestError> {
        let bytes = self.read_verified(entry)?;
        Self::lines(&bytes)
            .map(|(i, line)| serde_json::from_slice(line).map_err(|e| Self::corrupt(entry, i, e)))
            .collect()
    }
}
