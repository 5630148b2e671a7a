//! Inspection outputs.
//!
//! - attention CSV: `episode_id, mention_id, token_index, token, attention_weight, is_trigger`
//! - prototype CSV: `episode_id, kind, index, type_label, v0 .. v{d-1}`;
//!   `kind` is `prototype` (one row per type) or `query` (one row per query,
//!   `type_label` is the gold type)
//! - episodes JSON: array of `{episode_id, label_map, support, query}`
//! - memory JSON: array of invocations, each with its `(pass, fact_index, weight)` rows

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use numkernel::{ParamRegistry, Tape};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::episodes::{Episode, EpisodeDump};
use crate::error::{Error, Result};
use crate::memory::TraceRow;
use crate::model::{forward_episode, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpKind {
    Attention,
    Prototypes,
    Episodes,
    Memory,
}

impl FromStr for DumpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Self::Attention),
            "prototypes" => Ok(Self::Prototypes),
            "episodes" => Ok(Self::Episodes),
            "memory" => Ok(Self::Memory),
            other => Err(Error::Config(format!(
                "unknown dump kind `{other}` (attention|prototypes|episodes|memory)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub episode_id: usize,
    pub mention_id: usize,
    pub token_index: usize,
    pub token: String,
    pub attention_weight: f64,
    pub is_trigger: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorRow {
    pub episode_id: usize,
    pub kind: &'static str,
    pub index: usize,
    pub type_label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryInvocation {
    pub episode_id: usize,
    /// `ti` (facts are words) or `ec` (facts are same-type support sentences).
    pub scope: String,
    /// Mention index for `ti`, local type for `ec`.
    pub owner: usize,
    /// Word index for `ti`, shot index for `ec`.
    pub question: usize,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Default)]
pub struct DumpRecords {
    pub attention: Vec<AttentionRow>,
    pub vectors: Vec<VectorRow>,
    pub memory: Vec<MemoryInvocation>,
}

/// Runs each episode with frozen parameters and collects its dump records.
pub fn collect(reg: &ParamRegistry, model: &Model, data: &Dataset, episodes: &[Episode], lambda: f64) -> Result<DumpRecords> {
    let mut out = DumpRecords::default();
    for (eid, ep) in episodes.iter().enumerate() {
        let mut tape = Tape::new(reg);
        let fwd = forward_episode(&mut tape, model, &data.vocab, ep, lambda, None)?;
        for (mid, (m, enc)) in ep.mentions().zip(&fwd.encodings).enumerate() {
            for (i, (tok, &w)) in m.tokens.iter().zip(tape.value(enc.alpha)).enumerate() {
                out.attention.push(AttentionRow {
                    episode_id: eid,
                    mention_id: mid,
                    token_index: i,
                    token: tok.clone(),
                    attention_weight: w,
                    is_trigger: i == m.trigger_index,
                });
            }
            for (word, mem) in enc.memories.iter().enumerate() {
                out.memory.push(MemoryInvocation {
                    episode_id: eid,
                    scope: "ti".into(),
                    owner: mid,
                    question: word,
                    rows: mem.trace(&tape).rows(),
                });
            }
        }
        for (t, shots) in fwd.ec_memories.iter().enumerate() {
            for (j, mem) in shots.iter().enumerate() {
                out.memory.push(MemoryInvocation {
                    episode_id: eid,
                    scope: "ec".into(),
                    owner: t,
                    question: j,
                    rows: mem.trace(&tape).rows(),
                });
            }
        }
        if let Some(protos) = &fwd.prototypes {
            for (t, &e) in protos.iter().enumerate() {
                out.vectors.push(VectorRow {
                    episode_id: eid,
                    kind: "prototype",
                    index: t,
                    type_label: ep.label_map[t].clone(),
                    values: tape.value(e).to_vec(),
                });
            }
        }
        let n_support: usize = ep.support.iter().map(Vec::len).sum();
        for (q, item) in ep.query.iter().enumerate() {
            out.vectors.push(VectorRow {
                episode_id: eid,
                kind: "query",
                index: q,
                type_label: ep.label_map[item.label].clone(),
                values: tape.value(fwd.encodings[n_support + q].sentence).to_vec(),
            });
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_attention_csv(path: impl AsRef<Path>, rows: &[AttentionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path.as_ref())?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_vectors_csv(path: impl AsRef<Path>, rows: &[VectorRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut w = csv::Writer::from_writer(create(path.as_ref())?);
    let mut header: Vec<String> = ["episode_id", "kind", "index", "type_label"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.episode_id.to_string(), r.kind.to_string(), r.index.to_string(), r.type_label.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberedEpisode {
    pub episode_id: usize,
    #[serde(flatten)]
    pub episode: EpisodeDump,
}

pub fn write_episodes_json(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<()> {
    let dumps: Vec<NumberedEpisode> = episodes
        .iter()
        .enumerate()
        .map(|(episode_id, e)| NumberedEpisode {
            episode_id,
            episode: e.dump(),
        })
        .collect();
    write_json(path, &dumps)
}

/// Writes one kind of dump for `episodes`.
pub fn dump(
    kind: DumpKind,
    reg: &ParamRegistry,
    model: &Model,
    data: &Dataset,
    episodes: &[Episode],
    lambda: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    if kind == DumpKind::Episodes {
        return write_episodes_json(path, episodes);
    }
    let records = collect(reg, model, data, episodes, lambda)?;
    match kind {
        DumpKind::Attention => write_attention_csv(path, &records.attention),
        DumpKind::Prototypes => {
            if model.ec.is_none() && model.cfg.metric == crate::model::Metric::Match {
                return Err(Error::Config("the matching metric has no prototypes to dump".into()));
            }
            write_vectors_csv(path, &records.vectors)
        }
        DumpKind::Memory => write_json(path, &records.memory),
        DumpKind::Episodes => unreachable!(),
    }
}
