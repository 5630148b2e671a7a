//! Few-shot classification over sentence encodings: support fusion,
//! memory-refined prototypes, distance softmax, and the average-prototype
//! and matching baselines.

use numkernel::{BiGruParams, ParamId, ParamRegistry, Rng, Tape, Var};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::memory::{run_episodic_memory, MemoryOutput, MemoryParams, MemoryUpdateKind};
use crate::model::ModelDims;
use crate::ti_encoder::Projection;

/// `support[i][j]` is shot `j` of local type `i`.
pub type SupportGrid = Vec<Vec<Var>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcParams {
    pub fuse: BiGruParams,
    pub question: BiGruParams,
    pub fact_proj: Projection,
    pub q_proj: Projection,
    pub memory: MemoryParams,
    /// `[2·hidden, n_H]`, maps a refined memory back to encoding space.
    pub readout: ParamId,
}

impl EcParams {
    pub fn register(reg: &mut ParamRegistry, dims: &ModelDims, update: MemoryUpdateKind, rng: &mut Rng) -> Result<Self> {
        let two_h = 2 * dims.hidden;
        Ok(Self {
            fuse: BiGruParams::register(reg, "ec.fuse", two_h, dims.hidden, rng)?,
            question: BiGruParams::register(reg, "ec.question", two_h, dims.hidden, rng)?,
            fact_proj: Projection::register(reg, "ec.fact_proj", dims.n_h, two_h, rng)?,
            q_proj: Projection::register(reg, "ec.q_proj", dims.n_h, two_h, rng)?,
            memory: MemoryParams::register(reg, "ec.mem", dims.n_h, update, rng)?,
            readout: reg.init_matrix("ec.readout", two_h, dims.n_h, rng)?,
        })
    }
}

/// Splits encodings given in [`Episode::mentions`] order into the support
/// grid and the query list.
pub fn integrate_sentences(episode: &Episode, encodings: &[Var]) -> Result<(SupportGrid, Vec<Var>)> {
    if encodings.len() != episode.num_mentions() {
        return Err(Error::State(format!(
            "episode has {} mentions but {} encodings",
            episode.num_mentions(),
            encodings.len()
        )));
    }
    let mut it = encodings.iter().copied();
    let support = episode
        .support
        .iter()
        .map(|shots| it.by_ref().take(shots.len()).collect())
        .collect();
    let query = it.collect();
    Ok((support, query))
}

fn flatten(support: &[Vec<Var>]) -> Result<Vec<Var>> {
    let flat: Vec<Var> = support.iter().flatten().copied().collect();
    if flat.is_empty() {
        return Err(Error::Domain("empty support set".into()));
    }
    Ok(flat)
}

/// Bi-GRU facts over the support, type-major and shot-minor.
pub fn fuse_support(tape: &mut Tape, support: &[Vec<Var>], p: &EcParams) -> Result<Vec<Var>> {
    let flat = flatten(support)?;
    Ok(numkernel::bigru_sequence(tape, &flat, &p.fuse)?)
}

/// One question per support sentence, same order as [`fuse_support`].
pub fn ec_question(tape: &mut Tape, support: &[Vec<Var>], p: &EcParams) -> Result<Vec<Var>> {
    let flat = flatten(support)?;
    Ok(numkernel::bigru_sequence(tape, &flat, &p.question)?)
}

#[derive(Debug, Clone)]
pub struct Prototypes {
    pub vectors: Vec<Var>,
    /// `memories[i][j]`: memory run for shot `j` of type `i`.
    pub memories: Vec<Vec<MemoryOutput>>,
}

/// Each shot is refined by memory over its own type's facts, asked with its
/// own question: `s̃ = s + R·m`. The prototype is the mean of the refined shots.
pub fn memory_prototypes(
    tape: &mut Tape,
    support: &[Vec<Var>],
    facts: &[Var],
    questions: &[Var],
    passes: usize,
    p: &EcParams,
) -> Result<Prototypes> {
    let total: usize = support.iter().map(Vec::len).sum();
    if facts.len() != total || questions.len() != total {
        return Err(Error::Kernel(numkernel::KernelError::Dimension {
            op: "memory_prototypes",
            expected: format!("{total} facts and questions"),
            got: format!("{} facts, {} questions", facts.len(), questions.len()),
        }));
    }
    let readout = tape.param(p.readout);
    let mut vectors = Vec::with_capacity(support.len());
    let mut memories = Vec::with_capacity(support.len());
    let mut offset = 0;
    for shots in support {
        let k = shots.len();
        let own = facts[offset..offset + k]
            .iter()
            .map(|&f| p.fact_proj.apply(tape, f))
            .collect::<Result<Vec<_>>>()?;
        let mut refined = Vec::with_capacity(k);
        let mut runs = Vec::with_capacity(k);
        for (j, &s) in shots.iter().enumerate() {
            let q = p.q_proj.apply(tape, questions[offset + j])?;
            let out = run_episodic_memory(tape, &own, q, passes, &p.memory)?;
            let back = tape.matvec(readout, out.memory)?;
            refined.push(tape.add(s, back)?);
            runs.push(out);
        }
        vectors.push(tape.mean(&refined)?);
        memories.push(runs);
        offset += k;
    }
    Ok(Prototypes { vectors, memories })
}

/// Plain mean of each type's shots.
pub fn avg_prototype(tape: &mut Tape, support: &[Vec<Var>]) -> Result<Vec<Var>> {
    support
        .iter()
        .map(|shots| {
            if shots.is_empty() {
                return Err(Error::Domain("type with no support shots".into()));
            }
            Ok(tape.mean(shots)?)
        })
        .collect()
}

/// `softmax_k(−‖q − e_k‖)`.
pub fn classify_query(tape: &mut Tape, query: Var, protos: &[Var]) -> Result<Var> {
    if protos.is_empty() {
        return Err(Error::Domain("no prototypes".into()));
    }
    let scores = protos
        .iter()
        .map(|&e| {
            let d = tape.sub(query, e)?;
            let d = tape.norm(d)?;
            tape.scale(d, -1.0)
        })
        .collect::<numkernel::Result<Vec<_>>>()?;
    let scores = tape.concat(&scores)?;
    Ok(tape.softmax(scores)?)
}

/// Softmax over types of the mean cosine similarity to that type's shots.
pub fn matching_score(tape: &mut Tape, query: Var, support: &[Vec<Var>]) -> Result<Var> {
    if support.is_empty() {
        return Err(Error::Domain("empty support set".into()));
    }
    let mut scores = Vec::with_capacity(support.len());
    for shots in support {
        let sims = shots
            .iter()
            .map(|&s| tape.cosine(query, s))
            .collect::<numkernel::Result<Vec<_>>>()?;
        if sims.is_empty() {
            return Err(Error::Domain("type with no support shots".into()));
        }
        scores.push(tape.mean(&sims)?);
    }
    let scores = tape.concat(&scores)?;
    Ok(tape.softmax(scores)?)
}

pub fn ec_loss(tape: &mut Tape, pred: Var, gold: usize) -> Result<Var> {
    tape.cross_entropy(pred, gold).map_err(|e| match e {
        numkernel::KernelError::Domain(m) => Error::Domain(m),
        other => other.into(),
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `λ·l_ti + (1 − λ)·l_ec`.
pub fn joint_loss(tape: &mut Tape, l_ti: Var, l_ec: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let a = tape.scale(l_ti, lambda)?;
    let b = tape.scale(l_ec, 1.0 - lambda)?;
    Ok(tape.add(a, b)?)
}

pub fn joint_loss_value(l_ti: f64, l_ec: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * l_ti + (1.0 - lambda) * l_ec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPrediction {
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub gold: usize,
}

impl QueryPrediction {
    pub fn new(probs: Vec<f64>, gold: usize) -> Self {
        let predicted = argmax(&probs);
        Self { probs, predicted, gold }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.gold
    }
}

/// First index of the largest value.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use numkernel::Tensor;

    use super::*;
    use crate::corpus::EventMention;
    use crate::episodes::QueryItem;

    fn dims() -> ModelDims {
        ModelDims {
            d_w: 4,
            d_p: 2,
            hidden: 2,
            n_h: 3,
            pos_rows: 8,
        }
    }

    fn setup(seed: u64) -> (ParamRegistry, EcParams) {
        let mut rng = Rng::new(seed);
        let mut reg = ParamRegistry::new();
        let p = EcParams::register(&mut reg, &dims(), MemoryUpdateKind::Relu, &mut rng).unwrap();
        (reg, p)
    }

    fn grid(tape: &mut Tape, rng: &mut Rng, n: usize, k: usize, dim: usize) -> SupportGrid {
        (0..n)
            .map(|_| {
                (0..k)
                    .map(|_| tape.constant((0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap())
                    .collect()
            })
            .collect()
    }

    fn consts(tape: &mut Tape, v: &[f64]) -> Var {
        tape.constant(v.to_vec()).unwrap()
    }

    fn episode(n: usize, k: usize, q: usize) -> Episode {
        let m = |t: usize, i: usize| Arc::new(EventMention::new(vec![format!("{t}-{i}")], 0, format!("T{t}")).unwrap());
        Episode {
            support: (0..n).map(|t| (0..k).map(|i| m(t, i)).collect()).collect(),
            query: (0..q).map(|i| QueryItem { mention: m(i % n, 100 + i), label: i % n }).collect(),
            label_map: (0..n).map(|t| format!("T{t}")).collect(),
        }
    }

    #[test]
    fn integration_arranges_grid_and_queries() {
        let reg = ParamRegistry::new();
        let mut tape = Tape::new(&reg);
        let ep = episode(5, 5, 5);
        let enc: Vec<Var> = (0..30).map(|i| consts(&mut tape, &[i as f64])).collect();
        let (s, q) = integrate_sentences(&ep, &enc).unwrap();
        assert_eq!(s.iter().map(Vec::len).sum::<usize>(), 25);
        assert_eq!(tape.value(s[2][3]), &[13.0]);
        assert_eq!(q.len(), 5);
        assert_eq!(tape.value(q[0]), &[25.0]);
        let (s, q) = integrate_sentences(&episode(2, 1, 1), &enc[..3]).unwrap();
        assert_eq!((s.len(), s[0].len(), q.len()), (2, 1, 1));
        assert!(matches!(integrate_sentences(&ep, &enc[..29]), Err(Error::State(_))));
    }

    #[test]
    fn support_fusion_counts_and_order() {
        let (reg, p) = setup(1);
        let mut tape = Tape::new(&reg);
        let mut rng = Rng::new(2);
        for (n, k) in [(2, 1), (3, 2), (5, 5)] {
            let g = grid(&mut tape, &mut rng, n, k, 4);
            assert_eq!(ec_question(&mut tape, &g, &p).unwrap().len(), n * k);
            assert_eq!(fuse_support(&mut tape, &g, &p).unwrap().len(), n * k);
        }
        let g = grid(&mut tape, &mut rng, 2, 2, 4);
        let mut swapped = g.clone();
        swapped[0].swap(0, 1);
        let a = fuse_support(&mut tape, &g, &p).unwrap();
        let b = fuse_support(&mut tape, &swapped, &p).unwrap();
        assert_ne!(tape.value(a[3]), tape.value(b[3]));
    }

    #[test]
    fn zero_fusion_weights() {
        let (mut reg, p) = setup(3);
        for id in p.fuse.fwd.ids().into_iter().chain(p.fuse.bwd.ids()).chain(p.question.fwd.ids()).chain(p.question.bwd.ids()) {
            let shape = reg.get(id).shape().to_vec();
            *reg.get_mut(id) = Tensor::zeros(shape);
        }
        let mut tape = Tape::new(&reg);
        let g = grid(&mut tape, &mut Rng::new(4), 2, 3, 4);
        for v in fuse_support(&mut tape, &g, &p).unwrap().into_iter().chain(ec_question(&mut tape, &g, &p).unwrap()) {
            assert!(tape.value(v).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn memory_prototypes_stay_within_type() {
        let (reg, p) = setup(5);
        let mut tape = Tape::new(&reg);
        let mut rng = Rng::new(6);
        let g = grid(&mut tape, &mut rng, 2, 3, 4);
        let facts = fuse_support(&mut tape, &g, &p).unwrap();
        let qs = ec_question(&mut tape, &g, &p).unwrap();
        let base = memory_prototypes(&mut tape, &g, &facts, &qs, 3, &p).unwrap();
        let mut g2 = g.clone();
        g2[1][0] = consts(&mut tape, &[9.0, -9.0, 3.0, 1.0]);
        let mut facts2 = facts.clone();
        facts2[3] = consts(&mut tape, &[0.7, 0.1, -0.3, 0.2]);
        let other = memory_prototypes(&mut tape, &g2, &facts2, &qs, 3, &p).unwrap();
        assert_eq!(tape.value(base.vectors[0]), tape.value(other.vectors[0]));
        assert_ne!(tape.value(base.vectors[1]), tape.value(other.vectors[1]));
        let plain = avg_prototype(&mut tape, &g).unwrap();
        assert_ne!(tape.value(base.vectors[0]), tape.value(plain[0]));
        assert_eq!(base.memories[1][2].attention.len(), 3);
    }

    #[test]
    fn single_shot_prototype_is_its_refinement() {
        let (reg, p) = setup(7);
        let mut tape = Tape::new(&reg);
        let g = grid(&mut tape, &mut Rng::new(8), 3, 1, 4);
        let facts = fuse_support(&mut tape, &g, &p).unwrap();
        let qs = ec_question(&mut tape, &g, &p).unwrap();
        let protos = memory_prototypes(&mut tape, &g, &facts, &qs, 2, &p).unwrap();
        let r = tape.param(p.readout);
        let back = tape.matvec(r, protos.memories[1][0].memory).unwrap();
        let refined = tape.add(g[1][0], back).unwrap();
        assert_eq!(tape.value(protos.vectors[1]), tape.value(refined));
    }

    #[test]
    fn average_prototypes() {
        let reg = ParamRegistry::new();
        let mut tape = Tape::new(&reg);
        let g = vec![vec![consts(&mut tape, &[0.0, 0.0]), consts(&mut tape, &[2.0, 4.0])]];
        let e = avg_prototype(&mut tape, &g).unwrap();
        assert_eq!(tape.value(e[0]), &[1.0, 2.0]);
        let v = [0.1, 1.0 / 3.0, -7.77];
        for k in [1, 5, 15] {
            let copies: Vec<Var> = (0..k).map(|_| consts(&mut tape, &v)).collect();
            let e = avg_prototype(&mut tape, &[copies]).unwrap();
            assert_eq!(tape.value(e[0]), &v);
        }
        let mut rng = Rng::new(9);
        let g = grid(&mut tape, &mut rng, 1, 4, 3);
        let mut rev = g.clone();
        rev[0].reverse();
        let a = avg_prototype(&mut tape, &g).unwrap();
        let b = avg_prototype(&mut tape, &rev).unwrap();
        for (x, y) in tape.value(a[0]).iter().zip(tape.value(b[0])) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn distance_softmax() {
        let reg = ParamRegistry::new();
        let mut tape = Tape::new(&reg);
        let e1 = consts(&mut tape, &[0.0, 0.0]);
        let e2 = consts(&mut tape, &[3.0, 0.0]);
        let q = consts(&mut tape, &[0.0, 0.0]);
        let p = classify_query(&mut tape, q, &[e1, e2]).unwrap();
        let expected = 1.0 / (1.0 + (-3f64).exp());
        assert!((tape.value(p)[0] - expected).abs() < 1e-12);
        assert!((tape.value(p)[0] - 0.9526).abs() < 1e-4);
        assert!((tape.value(p)[1] - 0.0474).abs() < 1e-4);
        let mid = consts(&mut tape, &[1.5, 2.0]);
        let p = classify_query(&mut tape, mid, &[e1, e2]).unwrap();
        assert!((tape.value(p)[0] - 0.5).abs() < 1e-15);
        let wrong = consts(&mut tape, &[1.0, 2.0, 3.0]);
        assert!(classify_query(&mut tape, wrong, &[e1, e2]).is_err());
    }

    #[test]
    fn distance_shift_leaves_probabilities_unchanged() {
        let mut rng = Rng::new(10);
        for _ in 0..200 {
            let d: Vec<f64> = (0..5).map(|_| rng.uniform(0.0, 10.0)).collect();
            let c = rng.uniform(0.0, 20.0);
            let p = numkernel::softmax(&d.iter().map(|x| -x).collect::<Vec<_>>()).unwrap();
            let shifted = numkernel::softmax(&d.iter().map(|x| -(x + c)).collect::<Vec<_>>()).unwrap();
            for (a, b) in p.iter().zip(&shifted) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matching_baseline() {
        let reg = ParamRegistry::new();
        let mut tape = Tape::new(&reg);
        let a = consts(&mut tape, &[1.0, 0.0]);
        let b = consts(&mut tape, &[0.0, 1.0]);
        let p = matching_score(&mut tape, a, &[vec![a, a], vec![b, b]]).unwrap();
        assert_eq!(argmax(tape.value(p)), 0);
        let p = matching_score(&mut tape, a, &[vec![a], vec![a], vec![a]]).unwrap();
        assert!(tape.value(p).iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let mut rng = Rng::new(11);
        let mut v = |tape: &mut Tape| consts(tape, &[rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]);
        let (q, s1, s2) = (v(&mut tape), v(&mut tape), v(&mut tape));
        let p = matching_score(&mut tape, q, &[vec![s1], vec![s2]]).unwrap();
        let cos = |x: &[f64], y: &[f64]| {
            let d: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            let n = |z: &[f64]| z.iter().map(|a| a * a).sum::<f64>().sqrt();
            d / (n(x) * n(y))
        };
        let expected = numkernel::softmax(&[
            cos(tape.value(q), tape.value(s1)),
            cos(tape.value(q), tape.value(s2)),
        ])
        .unwrap();
        for (x, y) in tape.value(p).iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
        let z = tape.zeros(3);
        let p = matching_score(&mut tape, z, &[vec![s1], vec![s2]]).unwrap();
        assert!(tape.value(p).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn losses() {
        let reg = ParamRegistry::new();
        let mut tape = Tape::new(&reg);
        let perfect = consts(&mut tape, &[0.0, 1.0]);
        let l = ec_loss(&mut tape, perfect, 1).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let uniform = consts(&mut tape, &[0.2; 5]);
        let l = ec_loss(&mut tape, uniform, 3).unwrap();
        assert!((tape.scalar(l) - 5f64.ln()).abs() < 1e-12);
        let p = consts(&mut tape, &[0.9526, 0.0474]);
        let l = ec_loss(&mut tape, p, 0).unwrap();
        assert!((tape.scalar(l) - 0.0486).abs() < 1e-4);
        assert!(matches!(ec_loss(&mut tape, p, 2), Err(Error::Domain(_))));

        assert!((joint_loss_value(0.2, 0.4, 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(joint_loss_value(0.2, 0.4, 0.0).unwrap(), 0.4);
        assert_eq!(joint_loss_value(0.2, 0.4, 1.0).unwrap(), 0.2);
        assert!(matches!(joint_loss_value(0.2, 0.4, 1.5), Err(Error::Domain(_))));
        let (a, b) = (consts(&mut tape, &[0.2]), consts(&mut tape, &[0.4]));
        let l = joint_loss(&mut tape, a, b, 0.0).unwrap();
        assert_eq!(tape.scalar(l), 0.4);
        assert!(joint_loss(&mut tape, a, b, -0.1).is_err());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(QueryPrediction::new(vec![0.1, 0.9], 1).predicted, 1);
    }
}
