//! Parameter layout and the per-episode forward pass.

use numkernel::{ParamRegistry, Rng, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, Vocabulary, DEFAULT_POSITION_ROWS};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::fewshot_ec::{
    avg_prototype, classify_query, ec_loss, ec_question, fuse_support, integrate_sentences, joint_loss,
    matching_score, memory_prototypes, EcParams, QueryPrediction,
};
use crate::memory::{MemoryOutput, MemoryUpdateKind};
use crate::ti_encoder::{encode_mention, ti_loss, Dropout, MentionEncoding, TiParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_w: usize,
    pub d_p: usize,
    pub hidden: usize,
    pub n_h: usize,
    pub pos_rows: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d_w: 50,
            d_p: 30,
            hidden: 25,
            n_h: 50,
            pos_rows: DEFAULT_POSITION_ROWS,
        }
    }
}

impl ModelDims {
    pub fn word_input(&self) -> usize {
        self.d_w + 3 * self.d_p
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_w == 0 || self.d_p == 0 || self.hidden == 0 || self.n_h == 0 || self.pos_rows < 2 {
            return Err(Error::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Instance-to-instance cosine matching.
    Match,
    /// Mean of support encodings.
    Proto,
    /// Memory-refined prototypes.
    #[default]
    Mproto,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "match" => Ok(Self::Match),
            "proto" => Ok(Self::Proto),
            "mproto" => Ok(Self::Mproto),
            other => Err(Error::Config(format!("unknown metric `{other}` (match|proto|mproto)"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Match => "match",
            Self::Proto => "proto",
            Self::Mproto => "mproto",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub metric: Metric,
    pub update: MemoryUpdateKind,
    pub passes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::default(),
            metric: Metric::Mproto,
            update: MemoryUpdateKind::Relu,
            passes: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub ti: TiParams,
    /// Only present for [`Metric::Mproto`].
    pub ec: Option<EcParams>,
}

impl Model {
    pub fn init(cfg: ModelConfig, embeddings: &EmbeddingTable, rng: &mut Rng) -> Result<(ParamRegistry, Self)> {
        cfg.dims.validate()?;
        if cfg.passes == 0 {
            return Err(Error::Config("passes must be at least 1".into()));
        }
        let mut reg = ParamRegistry::new();
        let ti = TiParams::register(&mut reg, &cfg.dims, cfg.update, embeddings, rng)?;
        let ec = match cfg.metric {
            Metric::Mproto => Some(EcParams::register(&mut reg, &cfg.dims, cfg.update, rng)?),
            Metric::Match | Metric::Proto => None,
        };
        Ok((reg, Self { cfg, ti, ec }))
    }
}

/// Randomness used while training. `None` means evaluation.
pub struct TrainNoise<'a> {
    pub dropout: f64,
    pub rng: &'a mut Rng,
}

#[derive(Debug, Clone)]
pub struct EpisodeForward {
    pub joint: Var,
    pub l_ti: Var,
    pub l_ec: Var,
    pub predictions: Vec<QueryPrediction>,
    /// In [`Episode::mentions`] order.
    pub encodings: Vec<MentionEncoding>,
    pub predicted_triggers: Vec<usize>,
    pub prototypes: Option<Vec<Var>>,
    /// EC memory runs, `[type][shot]`; empty unless memory prototypes are used.
    pub ec_memories: Vec<Vec<MemoryOutput>>,
}

impl EpisodeForward {
    pub fn trigger_hits(&self, episode: &Episode) -> usize {
        episode
            .mentions()
            .zip(&self.predicted_triggers)
            .filter(|(m, &p)| m.trigger_index == p)
            .count()
    }

    pub fn correct_queries(&self) -> usize {
        self.predictions.iter().filter(|p| p.correct()).count()
    }
}

pub fn forward_episode(
    tape: &mut Tape,
    model: &Model,
    vocab: &Vocabulary,
    episode: &Episode,
    lambda: f64,
    mut noise: Option<TrainNoise<'_>>,
) -> Result<EpisodeForward> {
    let passes = model.cfg.passes;
    let mut encodings = Vec::with_capacity(episode.num_mentions());
    let mut ti_terms = Vec::with_capacity(episode.num_mentions());
    let mut predicted_triggers = Vec::with_capacity(episode.num_mentions());
    for m in episode.mentions() {
        let ids = vocab.encode(&m.tokens);
        let drop = noise.as_mut().map(|n| Dropout {
            rate: n.dropout,
            rng: &mut *n.rng,
        });
        let enc = encode_mention(tape, &ids, passes, drop, &model.ti)?;
        ti_terms.push(ti_loss(tape, &enc.trigger_probs, m.trigger_index)?);
        predicted_triggers.push(enc.predicted_trigger(tape));
        encodings.push(enc);
    }
    let l_ti = tape.mean(&ti_terms)?;

    let sentences: Vec<Var> = encodings.iter().map(|e| e.sentence).collect();
    let (support, queries) = integrate_sentences(episode, &sentences)?;
    let mut ec_memories = Vec::new();
    let prototypes = match (model.cfg.metric, &model.ec) {
        (Metric::Match, _) => None,
        (Metric::Proto, _) => Some(avg_prototype(tape, &support)?),
        (Metric::Mproto, Some(ec)) => {
            let facts = fuse_support(tape, &support, ec)?;
            let questions = ec_question(tape, &support, ec)?;
            let protos = memory_prototypes(tape, &support, &facts, &questions, passes, ec)?;
            ec_memories = protos.memories;
            Some(protos.vectors)
        }
        (Metric::Mproto, None) => return Err(Error::State("memory prototypes without EC parameters".into())),
    };

    let mut ec_terms = Vec::with_capacity(queries.len());
    let mut predictions = Vec::with_capacity(queries.len());
    for (&q, item) in queries.iter().zip(&episode.query) {
        let probs = match &prototypes {
            Some(protos) => classify_query(tape, q, protos)?,
            None => matching_score(tape, q, &support)?,
        };
        ec_terms.push(ec_loss(tape, probs, item.label)?);
        predictions.push(QueryPrediction::new(tape.value(probs).to_vec(), item.label));
    }
    let l_ec = tape.mean(&ec_terms)?;
    let joint = joint_loss(tape, l_ti, l_ec, lambda)?;
    Ok(EpisodeForward {
        joint,
        l_ti,
        l_ec,
        predictions,
        encodings,
        predicted_triggers,
        prototypes,
        ec_memories,
    })
}
