//! JSON-lines event log. Records carry no timestamps so reruns produce
//! identical files; wall-clock figures go to the human summary on stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;

pub const LOG_FILE: &str = "log.jsonl";

pub struct JsonLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLog {
    pub fn create(dir: &Path) -> Result<Self> {
        let path = dir.join(LOG_FILE);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(JsonLog {
            path,
            out: BufWriter::new(file),
        })
    }

    /// Writes one record and flushes, so a crashed run keeps its history.
    pub fn event(&mut self, record: Value) -> Result<(), tcm_core::Error> {
        let mut write = || -> io::Result<()> {
            serde_json::to_writer(&mut self.out, &record)?;
            self.out.write_all(b"\n")?;
            self.out.flush()
        };
        write().map_err(|source| tcm_core::Error::Io {
            path: self.path.clone(),
            source,
        })
    }
}
