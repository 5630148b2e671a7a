use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labelled sentence with a single trigger token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventMention {
    pub tokens: Vec<String>,
    pub trigger_index: usize,
    pub event_type: String,
}

impl EventMention {
    pub fn new(tokens: Vec<String>, trigger_index: usize, event_type: impl Into<String>) -> Result<Self> {
        let m = Self {
            tokens,
            trigger_index,
            event_type: event_type.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn trigger(&self) -> &str {
        &self.tokens[self.trigger_index]
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Domain("mention has no tokens".into()));
        }
        if self.trigger_index >= self.tokens.len() {
            return Err(Error::Domain(format!(
                "trigger_index {} out of bounds for {} tokens",
                self.trigger_index,
                self.tokens.len()
            )));
        }
        Ok(())
    }

    /// Drops tokens past `max_len`. The trigger keeps its index and label;
    /// a trigger that would be cut off is an error.
    pub fn truncated(mut self, max_len: usize) -> Result<Self> {
        if self.trigger_index >= max_len {
            return Err(Error::Domain(format!(
                "trigger_index {} does not survive truncation to {max_len} tokens",
                self.trigger_index
            )));
        }
        self.tokens.truncate(max_len);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRecord {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub mentions: Vec<EventMention>,
    pub rejected: Vec<RejectedRecord>,
    pub truncated: usize,
}

/// Reads JSONL mentions. Malformed JSON aborts with the line number;
/// records that parse but fail validation are skipped and reported.
pub fn parse_jsonl<R: BufRead>(reader: R, max_len: usize) -> Result<LoadReport> {
    if max_len == 0 {
        return Err(Error::Domain("max_len must be positive".into()));
    }
    let mut report = LoadReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: EventMention = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let outcome = raw.validate().and_then(|_| {
            let long = raw.len() > max_len;
            raw.truncated(max_len).map(|m| (m, long))
        });
        match outcome {
            Ok((m, long)) => {
                report.truncated += long as usize;
                report.mentions.push(m);
            }
            Err(e) => report.rejected.push(RejectedRecord {
                line: line_no,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

pub fn load_jsonl(path: impl AsRef<Path>, max_len: usize) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), max_len)
}

pub fn write_jsonl<W: Write>(mentions: &[EventMention], mut w: W) -> Result<()> {
    for m in mentions {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl writer>", e))?;
    }
    Ok(())
}

pub fn save_jsonl(mentions: &[EventMention], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(mentions, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}
