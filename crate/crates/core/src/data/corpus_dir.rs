//! On-disk corpus layout: `dir/{train,dev,eval}/` each holding one feature
//! file per utterance plus a protocol file, and `dir/manifest.json`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    read_features, read_protocol, write_features, write_protocol, Corpus, CorpusSpec, Label, Split, Utterance,
};
use crate::error::{Error, Result};

pub const PROTOCOL_FILE: &str = "protocol.txt";
const MANIFEST_FILE: &str = "manifest.json";
const FEATURE_EXT: &str = "tcmf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub count: usize,
    pub n_bonafide: usize,
    pub n_spoof: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: CorpusSpec,
    pub splits: Vec<SplitSummary>,
    /// Hex SHA-256 over every split file (see [`corpus_hash`]).
    pub sha256: String,
}

fn feature_path(dir: &Path, split: Split, id: &str) -> PathBuf {
    dir.join(split.name()).join(format!("{id}.{FEATURE_EXT}"))
}

/// Writes `corpus` under `dir`, creating directories as needed.
pub fn write_corpus(corpus: &Corpus, spec: &CorpusSpec, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let mut splits = Vec::new();
    for split in Split::ALL {
        let sdir = dir.join(split.name());
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        let utts = corpus.split(split);
        for u in utts {
            write_features(u, feature_path(dir, split, &u.id))?;
        }
        let entries: Vec<(String, Label)> = utts.iter().map(|u| (u.id.clone(), u.label)).collect();
        write_protocol(&entries, sdir.join(PROTOCOL_FILE))?;
        let n_spoof = utts.iter().filter(|u| u.label == Label::Spoof).count();
        splits.push(SplitSummary {
            split,
            count: utts.len(),
            n_bonafide: utts.len() - n_spoof,
            n_spoof,
        });
    }
    let manifest = Manifest {
        spec: spec.clone(),
        splits,
        sha256: corpus_hash(dir)?,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads one split in protocol order. A feature file whose id or label
/// disagrees with the protocol, or that the protocol does not list, is a
/// consistency error.
pub fn read_split(dir: impl AsRef<Path>, split: Split) -> Result<Vec<Utterance>> {
    let dir = dir.as_ref();
    let sdir = dir.join(split.name());
    let protocol = read_protocol(sdir.join(PROTOCOL_FILE))?;
    let listed: HashSet<&str> = protocol.iter().map(|(id, _)| id.as_str()).collect();
    for entry in fs::read_dir(&sdir).map_err(|e| Error::io(&sdir, e))? {
        let path = entry.map_err(|e| Error::io(&sdir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(FEATURE_EXT) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if !listed.contains(stem) {
            return Err(Error::Consistency(format!(
                "{} is not listed in {}",
                path.display(),
                sdir.join(PROTOCOL_FILE).display()
            )));
        }
    }
    protocol
        .into_iter()
        .map(|(id, label)| {
            let u = read_features(feature_path(dir, split, &id))?;
            if u.id != id || u.label != label {
                return Err(Error::Consistency(format!(
                    "{} protocol lists {id} as {label}, file holds {} as {}",
                    split.name(),
                    u.id,
                    u.label
                )));
            }
            Ok(u)
        })
        .collect()
}

/// Hex SHA-256 over the split directories: for each file in sorted relative
/// path order, the path, a NUL, the byte length as `u64` LE, then the bytes.
pub fn corpus_hash(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for split in Split::ALL {
        let sdir = dir.join(split.name());
        for entry in fs::read_dir(&sdir).map_err(|e| Error::io(&sdir, e))? {
            let entry = entry.map_err(|e| Error::io(&sdir, e))?;
            if entry.path().is_file() {
                files.push(format!("{}/{}", split.name(), entry.file_name().to_string_lossy()));
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for rel in &files {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
