use crate::error::{KernelError, Result};
use crate::registry::ParamRegistry;

/// Plain SGD: `p <- p - lr * grad(p)` for each trainable tensor, then clears
/// all gradients. Fails before touching anything if a trainable tensor has
/// no gradient.
pub fn sgd_step(registry: &mut ParamRegistry, lr: f64) -> Result<()> {
    if let Some((_, name, _)) = registry
        .iter()
        .find(|(id, _, t)| registry.is_trainable(*id) && t.grad().is_none())
    {
        return Err(KernelError::State(format!("missing gradient for trainable `{name}`")));
    }
    let ids: Vec<_> = registry.ids().collect();
    for id in ids {
        if !registry.is_trainable(id) {
            continue;
        }
        let t = registry.get_mut(id);
        let grad = t.grad().expect("checked above").to_vec();
        for (p, g) in t.values_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        if t.values().iter().any(|v| !v.is_finite()) {
            return Err(KernelError::Numeric("sgd_step"));
        }
    }
    registry.clear_grads();
    Ok(())
}
