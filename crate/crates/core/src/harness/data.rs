use numkernel::Rng;

use super::config::RunConfig;
use super::seeds;
use crate::corpus::{
    build_vocab, load_embeddings, load_jsonl, split_by_type, synth_generate, DatasetSplit, EmbeddingTable,
    EventMention, Vocabulary,
};
use crate::error::Result;

/// A loaded corpus with its vocabulary, embeddings and type split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub mentions: Vec<EventMention>,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub split: DatasetSplit,
    pub rejected: usize,
    pub truncated: usize,
}

/// Loads `cfg.data` or generates the synthetic corpus. The vocabulary covers
/// every split, as a pretrained embedding table would.
pub fn prepare(cfg: &RunConfig) -> Result<Dataset> {
    let (mentions, rejected, truncated) = match &cfg.data {
        Some(path) => {
            let report = load_jsonl(path, cfg.max_len)?;
            (report.mentions, report.rejected.len(), report.truncated)
        }
        None => (synth_generate(&cfg.synth())?, 0, 0),
    };
    let vocab = build_vocab(&mentions, cfg.min_count)?;
    let base = Rng::new(cfg.seed);
    let mut emb_rng = base.derive(seeds::EMBEDDINGS);
    let embeddings = match &cfg.embeddings {
        Some(path) => load_embeddings(path, &vocab, cfg.d_w, &mut emb_rng)?,
        None => EmbeddingTable::random(&vocab, cfg.d_w, &mut emb_rng),
    };
    let split = split_by_type(&mentions, &cfg.split_spec(), base.derive(seeds::SPLIT).seed())?;
    Ok(Dataset {
        mentions,
        vocab,
        embeddings,
        split,
        rejected,
        truncated,
    })
}
