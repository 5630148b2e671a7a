//! Trigger identification and sentence encoding for a single mention.
//!
//! Words are embedded as `[word ‖ pos(start) ‖ pos(end) ‖ pos(len)]`, fused
//! by one Bi-GRU into facts and read by a second Bi-GRU into per-word
//! questions. Each word's question drives a pass of episodic memory over the
//! sentence's facts. The answer GRU labels every position as trigger or not,
//! and the sentence reader pools facts by attention over the memories.

use numkernel::{bigru_sequence, gru_cell, BiGruParams, GruParams, ParamId, ParamRegistry, Rng, Tape, Tensor, Var};

use crate::corpus::{position_features, EmbeddingTable, OOV_INIT_BOUND};
use crate::error::{Error, Result};
use crate::memory::{run_episodic_memory, MemoryOutput, MemoryParams, MemoryUpdateKind};
use crate::model::ModelDims;

/// Class index of "is the trigger" in every per-word distribution.
pub const TRIGGER_CLASS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub w: ParamId,
    pub b: ParamId,
}

impl Projection {
    pub fn register(reg: &mut ParamRegistry, prefix: &str, out: usize, input: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            w: reg.init_matrix(format!("{prefix}.w"), out, input, rng)?,
            b: reg.init_zeros(format!("{prefix}.b"), vec![out])?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        Ok(tape.affine(w, x, b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiParams {
    pub word: ParamId,
    pub pos_start: ParamId,
    pub pos_end: ParamId,
    pub pos_len: ParamId,
    pub pos_rows: usize,
    pub fuse: BiGruParams,
    pub question: BiGruParams,
    pub fact_proj: Projection,
    pub q_proj: Projection,
    pub memory: MemoryParams,
    pub answer_gru: GruParams,
    /// `[2, n_H]`
    pub answer_w: ParamId,
    /// `[n_H, n_H]`
    pub reader_w1: ParamId,
    /// `[1, n_H]`
    pub reader_w2: ParamId,
}

impl TiParams {
    pub fn register(
        reg: &mut ParamRegistry,
        dims: &ModelDims,
        update: MemoryUpdateKind,
        embeddings: &EmbeddingTable,
        rng: &mut Rng,
    ) -> Result<Self> {
        if embeddings.dim != dims.d_w {
            return Err(Error::Config(format!(
                "embedding dimension {} does not match d_w = {}",
                embeddings.dim, dims.d_w
            )));
        }
        let word = reg.insert(
            "ti.emb.word",
            Tensor::new(vec![embeddings.rows(), dims.d_w], embeddings.values.clone())?,
            embeddings.trainable,
        )?;
        let rows = dims.pos_rows;
        let pos_start = reg.init_uniform("ti.emb.pos_start", rows, dims.d_p, OOV_INIT_BOUND, rng)?;
        let pos_end = reg.init_uniform("ti.emb.pos_end", rows, dims.d_p, OOV_INIT_BOUND, rng)?;
        let pos_len = reg.init_uniform("ti.emb.pos_len", rows, dims.d_p, OOV_INIT_BOUND, rng)?;
        let input = dims.word_input();
        let fuse = BiGruParams::register(reg, "ti.fuse", input, dims.hidden, rng)?;
        let question = BiGruParams::register(reg, "ti.question", input, dims.hidden, rng)?;
        let two_h = 2 * dims.hidden;
        let fact_proj = Projection::register(reg, "ti.fact_proj", dims.n_h, two_h, rng)?;
        let q_proj = Projection::register(reg, "ti.q_proj", dims.n_h, two_h, rng)?;
        let memory = MemoryParams::register(reg, "ti.mem", dims.n_h, update, rng)?;
        let answer_gru = GruParams::register(reg, "ti.answer_gru", 2 + two_h, dims.n_h, rng)?;
        let answer_w = reg.init_matrix("ti.answer.w", 2, dims.n_h, rng)?;
        let reader_w1 = reg.init_matrix("ti.reader.w1", dims.n_h, dims.n_h, rng)?;
        let reader_w2 = reg.init_matrix("ti.reader.w2", 1, dims.n_h, rng)?;
        Ok(Self {
            word,
            pos_start,
            pos_end,
            pos_len,
            pos_rows: rows,
            fuse,
            question,
            fact_proj,
            q_proj,
            memory,
            answer_gru,
            answer_w,
            reader_w1,
            reader_w2,
        })
    }
}

/// One vector per token: `[word ‖ pos(start) ‖ pos(end) ‖ pos(len)]`.
pub fn embed_words(tape: &mut Tape, ids: &[usize], p: &TiParams) -> Result<Vec<Var>> {
    let positions = position_features(ids.len())?;
    let word = tape.param(p.word);
    let (ps, pe, pl) = (tape.param(p.pos_start), tape.param(p.pos_end), tape.param(p.pos_len));
    ids.iter()
        .zip(positions)
        .map(|(&id, pos)| {
            let pos = pos.clamped(p.pos_rows);
            let parts = [
                tape.row(word, id)?,
                tape.row(ps, pos.start)?,
                tape.row(pe, pos.end)?,
                tape.row(pl, pos.length)?,
            ];
            Ok(tape.concat(&parts)?)
        })
        .collect()
}

fn bigru_checked(tape: &mut Tape, inputs: &[Var], p: &BiGruParams, what: &str) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::Domain(format!("{what} over an empty sentence")));
    }
    Ok(bigru_sequence(tape, inputs, p)?)
}

/// Fact vectors, `2·hidden` per token.
pub fn fuse_inputs(tape: &mut Tape, inputs: &[Var], p: &TiParams) -> Result<Vec<Var>> {
    bigru_checked(tape, inputs, &p.fuse, "input fusion")
}

/// Question vectors, `2·hidden` per token.
pub fn ti_question(tape: &mut Tape, inputs: &[Var], p: &TiParams) -> Result<Vec<Var>> {
    bigru_checked(tape, inputs, &p.question, "question module")
}

/// Memory for one word. `facts` and `question` must already be in memory space.
pub fn per_word_memory(tape: &mut Tape, facts: &[Var], question: Var, passes: usize, p: &TiParams) -> Result<MemoryOutput> {
    run_episodic_memory(tape, facts, question, passes, &p.memory)
}

/// Per-position `(trigger, not-trigger)` distributions.
pub fn ti_answer(tape: &mut Tape, memories: &[Var], questions: &[Var], p: &TiParams) -> Result<Vec<Var>> {
    if memories.len() != questions.len() {
        return Err(Error::Kernel(numkernel::KernelError::Dimension {
            op: "ti_answer",
            expected: format!("{} questions", memories.len()),
            got: questions.len().to_string(),
        }));
    }
    let Some(&last) = memories.last() else {
        return Err(Error::Domain("answer module over an empty sentence".into()));
    };
    let w = tape.param(p.answer_w);
    let mut d = last;
    let mut y = tape.constant(vec![0.5, 0.5])?;
    let mut out = Vec::with_capacity(questions.len());
    for &q in questions {
        let x = tape.concat(&[y, q])?;
        d = gru_cell(tape, x, d, &p.answer_gru)?;
        let logits = tape.matvec(w, d)?;
        y = tape.softmax(logits)?;
        out.push(y);
    }
    Ok(out)
}

/// Mean binary cross-entropy; only `gold` is a positive.
pub fn ti_loss(tape: &mut Tape, preds: &[Var], gold: usize) -> Result<Var> {
    if gold >= preds.len() {
        return Err(Error::Domain(format!(
            "trigger index {gold} outside a sentence of {} tokens",
            preds.len()
        )));
    }
    let terms = preds
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let target = if i == gold { TRIGGER_CLASS } else { 1 - TRIGGER_CLASS };
            tape.cross_entropy(y, target)
        })
        .collect::<numkernel::Result<Vec<_>>>()?;
    Ok(tape.mean(&terms)?)
}

/// Word attention `α` and the pooled sentence vector `s = Σ α_i f_i`.
pub fn read_sentence(tape: &mut Tape, facts: &[Var], memories: &[Var], p: &TiParams) -> Result<(Var, Var)> {
    if facts.len() != memories.len() {
        return Err(Error::Kernel(numkernel::KernelError::Dimension {
            op: "read_sentence",
            expected: format!("{} memories", facts.len()),
            got: memories.len().to_string(),
        }));
    }
    if facts.is_empty() {
        return Err(Error::Domain("sentence reader over an empty sentence".into()));
    }
    let (w1, w2) = (tape.param(p.reader_w1), tape.param(p.reader_w2));
    let mut scores = Vec::with_capacity(memories.len());
    for &m in memories {
        let h = tape.matvec(w1, m)?;
        let h = tape.tanh(h)?;
        scores.push(tape.matvec(w2, h)?);
    }
    let scores = tape.concat(&scores)?;
    let alpha = tape.softmax(scores)?;
    let weighted = (0..facts.len())
        .map(|i| {
            let a = tape.pick(alpha, i)?;
            tape.scale_by(facts[i], a)
        })
        .collect::<numkernel::Result<Vec<_>>>()?;
    let s = tape.sum(&weighted)?;
    Ok((alpha, s))
}

#[derive(Debug, Clone)]
pub struct MentionEncoding {
    pub trigger_probs: Vec<Var>,
    pub alpha: Var,
    pub sentence: Var,
    pub memories: Vec<MemoryOutput>,
}

impl MentionEncoding {
    /// Position with the highest trigger-class probability.
    pub fn predicted_trigger(&self, tape: &Tape) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &y) in self.trigger_probs.iter().enumerate() {
            let v = tape.value(y)[TRIGGER_CLASS];
            if v > best.1 {
                best = (i, v);
            }
        }
        best.0
    }
}

/// Dropout applied to word inputs while training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

pub fn encode_mention(
    tape: &mut Tape,
    ids: &[usize],
    passes: usize,
    dropout: Option<Dropout<'_>>,
    p: &TiParams,
) -> Result<MentionEncoding> {
    let mut inputs = embed_words(tape, ids, p)?;
    if let Some(d) = dropout {
        for v in &mut inputs {
            *v = tape.dropout(*v, d.rate, d.rng, true)?;
        }
    }
    let facts = fuse_inputs(tape, &inputs, p)?;
    let questions = ti_question(tape, &inputs, p)?;
    let mem_facts = facts
        .iter()
        .map(|&f| p.fact_proj.apply(tape, f))
        .collect::<Result<Vec<_>>>()?;
    let mut memories = Vec::with_capacity(ids.len());
    for &q in &questions {
        let qp = p.q_proj.apply(tape, q)?;
        memories.push(per_word_memory(tape, &mem_facts, qp, passes, p)?);
    }
    let finals: Vec<Var> = memories.iter().map(|m| m.memory).collect();
    let trigger_probs = ti_answer(tape, &finals, &questions, p)?;
    let (alpha, sentence) = read_sentence(tape, &facts, &finals, p)?;
    Ok(MentionEncoding {
        trigger_probs,
        alpha,
        sentence,
        memories,
    })
}
