//! Synthetic, separable stand-in for a real event corpus.
//!
//! Each type owns three signature trigger words that appear nowhere else.
//! A sentence is filler words with one signature word at a random position.

use numkernel::Rng;
use serde::{Deserialize, Serialize};

use super::EventMention;
use crate::error::{Error, Result};

pub const SIGNATURES_PER_TYPE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_types: usize,
    pub per_type: usize,
    /// Total distinct words, signatures included.
    pub vocab_size: usize,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
}

impl SynthConfig {
    pub fn new(n_types: usize, per_type: usize, vocab_size: usize, seed: u64) -> Self {
        Self {
            n_types,
            per_type,
            vocab_size,
            seed,
            min_len: 5,
            max_len: 10,
        }
    }
}

pub fn type_label(t: usize) -> String {
    format!("type_{t:03}")
}

pub fn signature_word(t: usize, k: usize) -> String {
    format!("trig{t:03}_{k}")
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<EventMention>> {
    if cfg.n_types < 2 {
        return Err(Error::Domain(format!("need at least 2 types, got {}", cfg.n_types)));
    }
    let reserved = SIGNATURES_PER_TYPE * cfg.n_types;
    if cfg.vocab_size < reserved + 2 {
        return Err(Error::Domain(format!(
            "vocab_size {} cannot hold {reserved} signature words plus filler",
            cfg.vocab_size
        )));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Domain(format!("bad length range {}..={}", cfg.min_len, cfg.max_len)));
    }
    let fillers: Vec<String> = (0..cfg.vocab_size - reserved).map(|i| format!("w{i:04}")).collect();
    let mut rng = Rng::new(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_types * cfg.per_type);
    for t in 0..cfg.n_types {
        for _ in 0..cfg.per_type {
            let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
            let trigger_index = rng.below(len);
            let sig = signature_word(t, rng.below(SIGNATURES_PER_TYPE));
            let tokens = (0..len)
                .map(|i| {
                    if i == trigger_index {
                        sig.clone()
                    } else {
                        fillers[rng.below(fillers.len())].clone()
                    }
                })
                .collect();
            out.push(EventMention {
                tokens,
                trigger_index,
                event_type: type_label(t),
            });
        }
    }
    Ok(out)
}
