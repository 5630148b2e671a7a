//! GRU cells and bidirectional sequence runners on a [`Tape`].
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h~ = tanh(W_h x + U_h (r ∘ h) + b_h)
//! h' = (1 − z) ∘ h + z ∘ h~
//! ```
//!
//! The three gate blocks are stacked row-wise into one `W` (`[3H, I]`), one
//! `U` (`[3H, H]`) and one bias (`3H`).

use crate::error::{dim_err, KernelError, Result};
use crate::registry::{ParamId, ParamRegistry};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    /// Registers `{prefix}.w`, `{prefix}.u`, `{prefix}.b`. Weights use the
    /// fan-in uniform rule, biases start at zero.
    pub fn register(reg: &mut ParamRegistry, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let w = reg.init_matrix(format!("{prefix}.w"), 3 * hidden, input, rng)?;
        let u = reg.init_matrix(format!("{prefix}.u"), 3 * hidden, hidden, rng)?;
        let b = reg.init_zeros(format!("{prefix}.b"), vec![3 * hidden])?;
        Ok(Self { w, u, b, input, hidden })
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.w, self.u, self.b]
    }
}

pub fn gru_cell(tape: &mut Tape, x: Var, h_prev: Var, p: &GruParams) -> Result<Var> {
    if tape.vec_len(x) != p.input {
        return Err(dim_err("gru_cell input", p.input, tape.vec_len(x)));
    }
    if tape.vec_len(h_prev) != p.hidden {
        return Err(dim_err("gru_cell hidden", p.hidden, tape.vec_len(h_prev)));
    }
    let (w, u, b) = (tape.param(p.w), tape.param(p.u), tape.param(p.b));
    tape.gru(x, h_prev, w, u, b)
}

/// Runs a GRU from the zero state; returns every hidden state.
pub fn gru_sequence(tape: &mut Tape, xs: &[Var], p: &GruParams) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(KernelError::Domain("GRU over an empty sequence".into()));
    }
    let mut h = tape.zeros(p.hidden);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        h = gru_cell(tape, x, h, p)?;
        out.push(h);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiGruParams {
    pub fwd: GruParams,
    pub bwd: GruParams,
}

impl BiGruParams {
    pub fn register(reg: &mut ParamRegistry, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            fwd: GruParams::register(reg, &format!("{prefix}.fwd"), input, hidden, rng)?,
            bwd: GruParams::register(reg, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }
}

/// Output `t` is `[forward state after x_0..=x_t ‖ backward state after x_t..]`.
pub fn bigru_sequence(tape: &mut Tape, xs: &[Var], p: &BiGruParams) -> Result<Vec<Var>> {
    let fwd = gru_sequence(tape, xs, &p.fwd)?;
    let rev: Vec<Var> = xs.iter().rev().copied().collect();
    let mut bwd = gru_sequence(tape, &rev, &p.bwd)?;
    bwd.reverse();
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn zero_gru(reg: &mut ParamRegistry, input: usize, hidden: usize) -> GruParams {
        let w = reg.init_zeros("g.w", vec![3 * hidden, input]).unwrap();
        let u = reg.init_zeros("g.u", vec![3 * hidden, hidden]).unwrap();
        let b = reg.init_zeros("g.b", vec![3 * hidden]).unwrap();
        GruParams { w, u, b, input, hidden }
    }

    #[test]
    fn zero_weights_halve_hidden_state() {
        let mut reg = ParamRegistry::new();
        let p = zero_gru(&mut reg, 3, 2);
        let mut tape = Tape::new(&reg);
        let x = tape.constant(vec![0.3, -7.0, 2.0]).unwrap();
        let h = tape.constant(vec![1.0, -2.0]).unwrap();
        let out = gru_cell(&mut tape, x, h, &p).unwrap();
        assert_eq!(tape.value(out), &[0.5, -1.0]);
        let h0 = tape.zeros(2);
        let out = gru_cell(&mut tape, x, h0, &p).unwrap();
        assert_eq!(tape.value(out), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut reg = ParamRegistry::new();
        let p = zero_gru(&mut reg, 3, 2);
        let mut tape = Tape::new(&reg);
        let x = tape.constant(vec![0.3, 2.0]).unwrap();
        let h = tape.zeros(2);
        assert!(matches!(gru_cell(&mut tape, x, h, &p), Err(KernelError::Dimension { .. })));
    }

    #[test]
    fn random_cell_matches_straight_line_formula() {
        let mut rng = Rng::new(77);
        let mut reg = ParamRegistry::new();
        let p = GruParams::register(&mut reg, "g", 3, 2, &mut rng).unwrap();
        // non-zero biases so every term participates
        let b: Vec<f64> = (0..6).map(|_| rng.uniform(-0.5, 0.5)).collect();
        *reg.get_mut(p.b) = Tensor::new(vec![6], b).unwrap();
        let xv: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let hv: Vec<f64> = (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let w = reg.get(p.w).values();
        let u = reg.get(p.u).values();
        let bb = reg.get(p.b).values();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut expected = [0.0; 2];
        for i in 0..2 {
            let wx = |blk: usize| (0..3).map(|j| w[(blk * 2 + i) * 3 + j] * xv[j]).sum::<f64>();
            let uh = |blk: usize, v: &[f64]| (0..2).map(|j| u[(blk * 2 + i) * 2 + j] * v[j]).sum::<f64>();
            let z = sig(wx(0) + uh(0, &hv) + bb[i]);
            let r: Vec<f64> = (0..2)
                .map(|k| {
                    let wxk = (0..3).map(|j| w[(2 + k) * 3 + j] * xv[j]).sum::<f64>();
                    let uhk = (0..2).map(|j| u[(2 + k) * 2 + j] * hv[j]).sum::<f64>();
                    sig(wxk + uhk + bb[2 + k])
                })
                .collect();
            let rh: Vec<f64> = r.iter().zip(&hv).map(|(a, b)| a * b).collect();
            let cand = (wx(2) + uh(2, &rh) + bb[4 + i]).tanh();
            expected[i] = (1.0 - z) * hv[i] + z * cand;
        }

        let mut tape = Tape::new(&reg);
        let x = tape.constant(xv).unwrap();
        let h = tape.constant(hv).unwrap();
        let out = gru_cell(&mut tape, x, h, &p).unwrap();
        for (a, e) in tape.value(out).iter().zip(expected) {
            assert!((a - e).abs() < 1e-14, "{a} vs {e}");
        }
    }

    #[test]
    fn bigru_single_step_and_empty() {
        let mut rng = Rng::new(3);
        let mut reg = ParamRegistry::new();
        let p = BiGruParams::register(&mut reg, "bi", 2, 3, &mut rng).unwrap();
        let mut tape = Tape::new(&reg);
        let x = tape.constant(vec![0.4, -0.9]).unwrap();
        let out = bigru_sequence(&mut tape, &[x], &p).unwrap();
        assert_eq!(out.len(), 1);
        let h0 = tape.zeros(3);
        let f = gru_cell(&mut tape, x, h0, &p.fwd).unwrap();
        let b = gru_cell(&mut tape, x, h0, &p.bwd).unwrap();
        let mut expected = tape.value(f).to_vec();
        expected.extend_from_slice(tape.value(b));
        assert_eq!(tape.value(out[0]), expected.as_slice());
        assert!(matches!(bigru_sequence(&mut tape, &[], &p), Err(KernelError::Domain(_))));
    }

    #[test]
    fn bigru_palindrome_with_tied_weights_is_reverse_symmetric() {
        let mut rng = Rng::new(8);
        let mut reg = ParamRegistry::new();
        let p = BiGruParams::register(&mut reg, "bi", 2, 3, &mut rng).unwrap();
        for (f, b) in p.fwd.ids().into_iter().zip(p.bwd.ids()) {
            let t = reg.get(f).clone();
            *reg.get_mut(b) = t;
        }
        let mut tape = Tape::new(&reg);
        let a = tape.constant(vec![0.1, 0.7]).unwrap();
        let b = tape.constant(vec![-0.5, 0.2]).unwrap();
        let c = tape.constant(vec![0.9, -0.3]).unwrap();
        let seq = [a, b, c, b, a];
        let out = bigru_sequence(&mut tape, &seq, &p).unwrap();
        let n = out.len();
        for t in 0..n {
            let here = tape.value(out[t]);
            let mirror = tape.value(out[n - 1 - t]);
            assert_eq!(&here[..3], &mirror[3..]);
            assert_eq!(&here[3..], &mirror[..3]);
        }
    }

    #[test]
    fn bigru_zero_weights_give_zero_outputs() {
        let mut reg = ParamRegistry::new();
        let mk = |reg: &mut ParamRegistry, pre: &str| GruParams {
            w: reg.init_zeros(format!("{pre}.w"), vec![6, 2]).unwrap(),
            u: reg.init_zeros(format!("{pre}.u"), vec![6, 2]).unwrap(),
            b: reg.init_zeros(format!("{pre}.b"), vec![6]).unwrap(),
            input: 2,
            hidden: 2,
        };
        let p = BiGruParams {
            fwd: mk(&mut reg, "f"),
            bwd: mk(&mut reg, "b"),
        };
        let mut tape = Tape::new(&reg);
        let xs: Vec<Var> = (0..4)
            .map(|i| tape.constant(vec![i as f64, -(i as f64)]).unwrap())
            .collect();
        for v in bigru_sequence(&mut tape, &xs, &p).unwrap() {
            assert!(tape.value(v).iter().all(|&x| x == 0.0));
        }
    }
}
