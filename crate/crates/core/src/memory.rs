//! Episodic memory: attention gate over facts, attention-scaled GRU and
//! memory update, repeated for a fixed number of passes.
//!
//! ```text
//! m_0 = q
//! for t in 1..=T:
//!     u_i = [f_i ∘ q, |f_i − q|, f_i ∘ m_{t−1}, |f_i − m_{t−1}|]
//!     a   = softmax_i(tanh(W1 u_i) · w2)
//!     c   = GRU over (a_i · f_i), final state
//!     m_t = relu(W [m_{t−1}, c, q] + b)        (or GRU(c, m_{t−1}))
//! ```
//!
//! Facts, question and memory share one dimension.

use numkernel::{gru_cell, gru_sequence, GruParams, ParamId, ParamRegistry, Rng, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryUpdateKind {
    #[default]
    Relu,
    Gru,
}

impl std::str::FromStr for MemoryUpdateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "gru" => Ok(Self::Gru),
            other => Err(Error::Config(format!("unknown memory update `{other}` (relu|gru)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MemoryUpdate {
    Relu { w: ParamId, b: ParamId },
    Gru(GruParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryParams {
    pub dim: usize,
    /// `[dim, 4·dim]`
    pub gate_w1: ParamId,
    /// `[1, dim]`
    pub gate_w2: ParamId,
    pub attn_gru: GruParams,
    pub update: MemoryUpdate,
}

impl MemoryParams {
    pub fn register(
        reg: &mut ParamRegistry,
        prefix: &str,
        dim: usize,
        kind: MemoryUpdateKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        let gate_w1 = reg.init_matrix(format!("{prefix}.gate.w1"), dim, 4 * dim, rng)?;
        let gate_w2 = reg.init_matrix(format!("{prefix}.gate.w2"), 1, dim, rng)?;
        let attn_gru = GruParams::register(reg, &format!("{prefix}.attn_gru"), dim, dim, rng)?;
        let update = match kind {
            MemoryUpdateKind::Relu => MemoryUpdate::Relu {
                w: reg.init_matrix(format!("{prefix}.update.w"), dim, 3 * dim, rng)?,
                b: reg.init_zeros(format!("{prefix}.update.b"), vec![dim])?,
            },
            MemoryUpdateKind::Gru => {
                MemoryUpdate::Gru(GruParams::register(reg, &format!("{prefix}.update_gru"), dim, dim, rng)?)
            }
        };
        Ok(Self {
            dim,
            gate_w1,
            gate_w2,
            attn_gru,
            update,
        })
    }
}

fn check_dim(tape: &Tape, what: &str, v: Var, dim: usize) -> Result<()> {
    let got = tape.vec_len(v);
    if got != dim {
        return Err(Error::Kernel(numkernel::KernelError::Dimension {
            op: "memory",
            expected: format!("{what} of dimension {dim}"),
            got: got.to_string(),
        }));
    }
    Ok(())
}

/// `[f ∘ q, |f − q|, f ∘ m, |f − m|]`.
pub fn gate_features(tape: &mut Tape, fact: Var, q: Var, m_prev: Var) -> Result<Var> {
    let fq = tape.mul(fact, q)?;
    let dq = tape.sub(fact, q)?;
    let dq = tape.abs(dq)?;
    let fm = tape.mul(fact, m_prev)?;
    let dm = tape.sub(fact, m_prev)?;
    let dm = tape.abs(dm)?;
    Ok(tape.concat(&[fq, dq, fm, dm])?)
}

/// One weight per fact, softmax-normalised over the facts.
pub fn attention_gate(tape: &mut Tape, facts: &[Var], q: Var, m_prev: Var, p: &MemoryParams) -> Result<Var> {
    if facts.is_empty() {
        return Err(Error::Domain("attention over zero facts".into()));
    }
    check_dim(tape, "question", q, p.dim)?;
    check_dim(tape, "memory", m_prev, p.dim)?;
    let w1 = tape.param(p.gate_w1);
    let w2 = tape.param(p.gate_w2);
    let mut scores = Vec::with_capacity(facts.len());
    for &f in facts {
        check_dim(tape, "fact", f, p.dim)?;
        let u = gate_features(tape, f, q, m_prev)?;
        let hidden = tape.matvec(w1, u)?;
        let hidden = tape.tanh(hidden)?;
        scores.push(tape.matvec(w2, hidden)?);
    }
    let scores = tape.concat(&scores)?;
    Ok(tape.softmax(scores)?)
}

/// Final state of a GRU run over `a_i · f_i`.
pub fn attentional_gru(tape: &mut Tape, facts: &[Var], attention: Var, p: &MemoryParams) -> Result<Var> {
    if tape.vec_len(attention) != facts.len() {
        return Err(Error::Kernel(numkernel::KernelError::Dimension {
            op: "attentional_gru",
            expected: format!("{} attention weights", facts.len()),
            got: tape.vec_len(attention).to_string(),
        }));
    }
    let mut scaled = Vec::with_capacity(facts.len());
    for (i, &f) in facts.iter().enumerate() {
        let w = tape.pick(attention, i)?;
        scaled.push(tape.scale_by(f, w)?);
    }
    let states = gru_sequence(tape, &scaled, &p.attn_gru)?;
    Ok(*states.last().expect("non-empty"))
}

pub fn memory_update(tape: &mut Tape, m_prev: Var, context: Var, q: Var, p: &MemoryParams) -> Result<Var> {
    check_dim(tape, "memory", m_prev, p.dim)?;
    check_dim(tape, "context", context, p.dim)?;
    check_dim(tape, "question", q, p.dim)?;
    match p.update {
        MemoryUpdate::Relu { w, b } => {
            let joined = tape.concat(&[m_prev, context, q])?;
            let (w, b) = (tape.param(w), tape.param(b));
            let pre = tape.affine(w, joined, b)?;
            Ok(tape.relu(pre)?)
        }
        MemoryUpdate::Gru(g) => Ok(gru_cell(tape, context, m_prev, &g)?),
    }
}

#[derive(Debug, Clone)]
pub struct MemoryOutput {
    pub memory: Var,
    /// Gate attention of each pass, in pass order.
    pub attention: Vec<Var>,
}

impl MemoryOutput {
    pub fn trace(&self, tape: &Tape) -> MemoryTrace {
        MemoryTrace {
            passes: self.attention.iter().map(|&a| tape.value(a).to_vec()).collect(),
        }
    }
}

pub fn run_episodic_memory(tape: &mut Tape, facts: &[Var], q: Var, passes: usize, p: &MemoryParams) -> Result<MemoryOutput> {
    if passes == 0 {
        return Err(Error::Domain("memory needs at least one pass".into()));
    }
    if facts.is_empty() {
        return Err(Error::Domain("memory over zero facts".into()));
    }
    let mut m = q;
    let mut attention = Vec::with_capacity(passes);
    for _ in 0..passes {
        let a = attention_gate(tape, facts, q, m, p)?;
        let c = attentional_gru(tape, facts, a, p)?;
        m = memory_update(tape, m, c, q, p)?;
        attention.push(a);
    }
    Ok(MemoryOutput { memory: m, attention })
}

/// Per-pass gate weights of one memory invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTrace {
    pub passes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub pass: usize,
    pub fact_index: usize,
    pub weight: f64,
}

impl MemoryTrace {
    /// Flat `(pass, fact_index, weight)` rows; passes count from 1.
    pub fn rows(&self) -> Vec<TraceRow> {
        self.passes
            .iter()
            .enumerate()
            .flat_map(|(t, w)| {
                w.iter().enumerate().map(move |(i, &weight)| TraceRow {
                    pass: t + 1,
                    fact_index: i,
                    weight,
                })
            })
            .collect()
    }
}
