//! Synthetic corpus generation, on-disk formats and batching.

mod batch;
mod corpus_dir;
mod features;
mod protocol;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub use batch::{batches, fix_length, Batch, BatchMode, LengthMode};
pub use corpus_dir::{corpus_hash, read_split, write_corpus, Manifest, SplitSummary, PROTOCOL_FILE};
pub use features::{decode_features, encode_features, read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use protocol::{parse_protocol, read_protocol, render_protocol, write_protocol};
pub use synth::{
    artifact_pattern, base_features, generate_corpus, generate_split, planted_artifacts, ArtifactSpec, BaseProcess,
    Corpus, CorpusSpec, Placement,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    /// Class index: 0 bona fide, 1 spoof (matches the logit order).
    pub fn index(self) -> usize {
        match self {
            Label::Bonafide => 0,
            Label::Spoof => 1,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Label::Bonafide),
            1 => Some(Label::Spoof),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }

    fn key(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Eval => 3,
        }
    }
}

/// One labelled feature matrix `T×F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub label: Label,
    pub features: Tensor,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }
}
