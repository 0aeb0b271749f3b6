//! Gradient verification by central finite differences.

use super::tape::{Tape, VarId};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// Build a scalar loss from a single differentiable input on a fresh tape.
pub type ScalarFn<R> = dyn Fn(&mut Tape<R>, VarId) -> Result<VarId>;

/// Maximum over coordinates of
/// |analytic - central difference| / (|analytic| + |central| + 1e-12).
///
/// The function must be deterministic; randomness has to be baked into the
/// closure as constants.
pub fn finite_difference_check<R, F>(f: &F, point: &Tensor<R>, epsilon: R) -> Result<R>
where
    R: Real,
    F: ?Sized + Fn(&mut Tape<R>, VarId) -> Result<VarId>,
{
    assert!(epsilon > R::zero(), "epsilon must be positive");
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: &Tensor<R>| -> Result<R> {
        let mut t = Tape::new();
        let x = t.leaf(p.clone(), false);
        let loss = f(&mut t, x)?;
        Ok(t.value(loss).item())
    };

    let tiny = R::from_f64_lossy(1e-12);
    let two = R::from_f64_lossy(2.0);
    let mut max_rel = R::zero();
    for i in 0..point.numel() {
        let mut hi = point.clone();
        hi.data_mut()[i] += epsilon;
        let mut lo = point.clone();
        lo.data_mut()[i] -= epsilon;
        let central = (eval(&hi)? - eval(&lo)?) / (two * epsilon);
        let a = analytic.data()[i];
        let rel = (a - central).abs() / (a.abs() + central.abs() + tiny);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
