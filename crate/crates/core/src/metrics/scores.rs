//! Score files: one `id score` pair per line, score with six decimals.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    /// Higher means more bona fide.
    pub score: f64,
}

pub fn render_scores(records: &[ScoreRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        if !r.score.is_finite() {
            return Err(Error::config(format!("score of {} is not finite", r.id)));
        }
        if r.id.is_empty() || r.id.contains(char::is_whitespace) {
            return Err(Error::config(format!("id {:?} is empty or contains whitespace", r.id)));
        }
        out.push_str(&format!("{} {:.6}\n", r.id, r.score));
    }
    Ok(out)
}

/// Line numbers in errors are 1-based.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[..] {
            [] => continue,
            [id, score] => {
                let score: f64 = score
                    .parse()
                    .map_err(|_| err(format!("score {score:?} is not a number")))?;
                if !score.is_finite() {
                    return Err(err(format!("score {score} is not finite")));
                }
                out.push(ScoreRecord {
                    id: id.to_owned(),
                    score,
                });
            }
            _ => return Err(err(format!("expected \"id score\", got {line:?}"))),
        }
    }
    Ok(out)
}

pub fn write_scores(records: &[ScoreRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_scores(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    parse_scores(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
