use numkernel::{
    bigru_sequence, finite_diff_check, gru_cell, softmax, BiGruParams, FdOptions, GruParams, ParamRegistry, Rng,
    Tape, Var,
};
use proptest::prelude::*;

fn check(reg: &mut ParamRegistry, f: impl FnMut(&mut Tape) -> numkernel::Result<Var>) {
    let report = finite_diff_check(reg, f, &FdOptions::default()).unwrap();
    for t in &report.tensors {
        assert!(t.passed, "{}: max rel {} at {:?}", t.name, t.max_rel_error, t.worst);
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = Rng::new(1);
    let mut reg = ParamRegistry::new();
    let a = reg.init_uniform("a", 5, 1, 1.0, &mut rng).unwrap();
    let b = reg.init_uniform("b", 5, 1, 1.0, &mut rng).unwrap();
    check(&mut reg, |t| {
        let (a, b) = (t.param(a), t.param(b));
        let s = t.add(a, b)?;
        let d = t.sub(a, b)?;
        let m = t.mul(s, d)?;
        let th = t.tanh(m)?;
        let sg = t.sigmoid(d)?;
        let ab = t.abs(d)?;
        let r = t.relu(s)?;
        let all = t.sum(&[th, sg, ab, r])?;
        let sc = t.scale(all, 0.7)?;
        t.dot(sc, sc)
    });
}

#[test]
fn structural_ops() {
    let mut rng = Rng::new(2);
    let mut reg = ParamRegistry::new();
    let table = reg.init_uniform("table", 4, 3, 1.0, &mut rng).unwrap();
    let w = reg.init_matrix("w", 2, 6, &mut rng).unwrap();
    let s = reg.init_uniform("s", 1, 1, 1.0, &mut rng).unwrap();
    check(&mut reg, |t| {
        let tab = t.param(table);
        let r0 = t.row(tab, 0)?;
        let r3 = t.row(tab, 3)?;
        let c = t.concat(&[r0, r3])?;
        let wv = t.param(w);
        let y = t.matvec(wv, c)?;
        let sl = t.slice(c, 1, 2)?;
        let sv = t.param(s);
        let z = t.scale_by(sl, sv)?;
        let q = t.add(y, z)?;
        let p = t.softmax(q)?;
        let mean = t.mean(&[r0, r3])?;
        let n = t.norm(mean)?;
        let ce = t.cross_entropy(p, 1)?;
        let k = t.pick(p, 0)?;
        t.sum(&[ce, n, k])
    });
}

#[test]
fn cosine_and_dropout_mask() {
    let mut rng = Rng::new(3);
    let mut reg = ParamRegistry::new();
    let a = reg.init_uniform("a", 6, 1, 1.0, &mut rng).unwrap();
    let b = reg.init_uniform("b", 6, 1, 1.0, &mut rng).unwrap();
    check(&mut reg, |t| {
        let mut drop_rng = Rng::new(99);
        let av = t.param(a);
        let bv = t.param(b);
        let ad = t.dropout(av, 0.3, &mut drop_rng, true)?;
        let c = t.cosine(ad, bv)?;
        let c2 = t.cosine(av, av)?;
        t.add(c, c2)
    });
}

#[test]
fn gru_cell_all_inputs_and_weights() {
    let mut rng = Rng::new(4);
    let mut reg = ParamRegistry::new();
    let p = GruParams::register(&mut reg, "g", 3, 4, &mut rng).unwrap();
    let x = reg.init_uniform("x", 3, 1, 1.0, &mut rng).unwrap();
    let h = reg.init_uniform("h", 4, 1, 1.0, &mut rng).unwrap();
    // biases away from zero so the gates are exercised off-centre
    for v in reg.get_mut(p.b).values_mut() {
        *v = rng.uniform(-0.5, 0.5);
    }
    check(&mut reg, |t| {
        let xv = t.param(x);
        let hv = t.param(h);
        let h1 = gru_cell(t, xv, hv, &p)?;
        let h2 = gru_cell(t, xv, h1, &p)?;
        t.dot(h2, h2)
    });
}

#[test]
fn bigru_through_sequence() {
    let mut rng = Rng::new(5);
    let mut reg = ParamRegistry::new();
    let p = BiGruParams::register(&mut reg, "bi", 2, 3, &mut rng).unwrap();
    let xs = reg.init_uniform("xs", 4, 2, 1.0, &mut rng).unwrap();
    check(&mut reg, |t| {
        let tab = t.param(xs);
        let seq: Vec<Var> = (0..4).map(|i| t.row(tab, i)).collect::<Result<_, _>>()?;
        let out = bigru_sequence(t, &seq, &p)?;
        let s = t.sum(&out)?;
        let y = t.tanh(s)?;
        t.dot(y, y)
    });
}

#[test]
fn gradients_are_deterministic_bitwise() {
    let run = || {
        let mut rng = Rng::new(6);
        let mut reg = ParamRegistry::new();
        let p = GruParams::register(&mut reg, "g", 3, 3, &mut rng).unwrap();
        let x = reg.init_uniform("x", 3, 1, 1.0, &mut rng).unwrap();
        let tape_vals = {
            let mut t = Tape::new(&reg);
            let xv = t.param(x);
            let h0 = t.zeros(3);
            let h = gru_cell(&mut t, xv, h0, &p).unwrap();
            let l = t.dot(h, h).unwrap();
            let g = t.backward(l).unwrap();
            let mut bits: Vec<u64> = vec![t.scalar(l).to_bits()];
            for (_, gv) in g.iter() {
                bits.extend(gv.iter().map(|v| v.to_bits()));
            }
            bits
        };
        tape_vals
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&v).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(v in prop::collection::vec(-20.0f64..20.0, 1..12), c in -100.0f64..100.0) {
        let p = softmax(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
