//! Central-difference verification of tape gradients.

use crate::error::{KernelError, Result};
use crate::registry::{ParamId, ParamRegistry};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates checked per tensor; `None` checks all of them.
    pub max_coords_per_tensor: Option<usize>,
    /// Magnitudes below this are compared on an absolute scale.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_coords_per_tensor: None,
            magnitude_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// Coordinate, analytic, numeric at the worst point.
    pub worst: Option<(usize, f64, f64)>,
    /// Coordinates verified with a one-sided stencil because the central one
    /// crossed a kink.
    pub one_sided: usize,
    /// Coordinates sitting on a kink from both sides; not compared.
    pub unverified: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn coords_checked(&self) -> usize {
        self.tensors.iter().map(|t| t.coords_checked).sum()
    }

    pub fn one_sided(&self) -> usize {
        self.tensors.iter().map(|t| t.one_sided).sum()
    }

    pub fn unverified(&self) -> usize {
        self.tensors.iter().map(|t| t.unverified).sum()
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Loss and branch signature.
fn eval<F>(registry: &ParamRegistry, loss_fn: &mut F) -> Result<(f64, u64)>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(registry);
    let loss = loss_fn(&mut tape)?;
    Ok((tape.scalar(loss), tape.branch_signature()))
}

fn eval_at<F>(registry: &mut ParamRegistry, id: ParamId, c: usize, x: f64, loss_fn: &mut F) -> Result<(f64, u64)>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let orig = registry.get(id).values()[c];
    registry.get_mut(id).values_mut()[c] = x;
    let out = eval(registry, loss_fn);
    registry.get_mut(id).values_mut()[c] = orig;
    out
}

enum Stencil {
    Central(f64),
    OneSided(f64),
    None,
}

/// Central difference when `p ± ε` stay on the smooth piece of `p`.
/// Otherwise a second-order one-sided difference `(-3f0 + 4f(p+k) - f(p+2k)) / 2k`
/// on a side that stays on it, halving `k` a few times if needed.
fn numeric_derivative<F>(
    registry: &mut ParamRegistry,
    id: ParamId,
    c: usize,
    base: (f64, u64),
    eps: f64,
    loss_fn: &mut F,
) -> Result<Stencil>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let p = registry.get(id).values()[c];
    let (f0, sig) = base;
    let plus = eval_at(registry, id, c, p + eps, loss_fn)?;
    let minus = eval_at(registry, id, c, p - eps, loss_fn)?;
    if plus.1 == sig && minus.1 == sig {
        return Ok(Stencil::Central((plus.0 - minus.0) / (2.0 * eps)));
    }
    let mut k = eps;
    let mut near = [plus, minus];
    for _ in 0..6 {
        for (side, dir) in [1.0, -1.0].into_iter().enumerate() {
            if near[side].1 != sig {
                continue;
            }
            let far = eval_at(registry, id, c, p + dir * 2.0 * k, loss_fn)?;
            if far.1 == sig {
                return Ok(Stencil::OneSided(dir * (-3.0 * f0 + 4.0 * near[side].0 - far.0) / (2.0 * k)));
            }
        }
        k /= 2.0;
        near = [
            eval_at(registry, id, c, p + k, loss_fn)?,
            eval_at(registry, id, c, p - k, loss_fn)?,
        ];
    }
    Ok(Stencil::None)
}

/// Compares tape gradients of `loss_fn` against central differences
/// `(f(p+ε) - f(p-ε)) / 2ε` for every trainable tensor. Where the stencil
/// crosses a relu, abs or floor kink (detected through the tape's branch
/// signature), the coordinate is checked one-sided instead. `loss_fn` must
/// build the same graph on every call; any randomness inside it must be
/// re-seeded per call.
pub fn finite_diff_check<F>(registry: &mut ParamRegistry, mut loss_fn: F, opts: &FdOptions) -> Result<FdReport>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let (loss, sig, grads) = {
        let mut tape = Tape::new(registry);
        let loss = loss_fn(&mut tape)?;
        (tape.scalar(loss), tape.branch_signature(), tape.backward(loss)?)
    };
    let (again, _) = eval(registry, &mut loss_fn)?;
    if again.to_bits() != loss.to_bits() {
        return Err(KernelError::Determinism {
            first: loss,
            second: again,
        });
    }

    let mut rng = Rng::new(opts.seed);
    let ids: Vec<ParamId> = registry.ids().filter(|&id| registry.is_trainable(id)).collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let n = registry.get(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(k) if k < n => {
                let mut c = rng.sample_indices(n, k);
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut max_rel: f64 = 0.0;
        let mut worst = None;
        let (mut one_sided, mut unverified) = (0, 0);
        for &c in &coords {
            let numeric = match numeric_derivative(registry, id, c, (loss, sig), opts.epsilon, &mut loss_fn)? {
                Stencil::Central(d) => d,
                Stencil::OneSided(d) => {
                    one_sided += 1;
                    d
                }
                Stencil::None => {
                    unverified += 1;
                    continue;
                }
            };
            let rel = relative_error(analytic[c], numeric, opts.magnitude_floor);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((c, analytic[c], numeric));
            }
        }
        tensors.push(TensorCheck {
            name: registry.name(id).to_string(),
            coords_checked: coords.len(),
            max_rel_error: max_rel,
            worst,
            one_sided,
            unverified,
            passed: max_rel < opts.tolerance,
        });
    }
    Ok(FdReport {
        loss,
        tensors,
        tolerance: opts.tolerance,
    })
}
