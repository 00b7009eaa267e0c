//! Central finite differences, used as an independent check on `backward`.

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Numerical gradient of `loss` with respect to every parameter in `params`,
/// by central differences with the given step.
pub fn finite_difference_grads(
    params: &ParamStore<f64>,
    step: f64,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> Vec<Tensor<f64>> {
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let shape = params.get(id).shape();
        let mut grad = Tensor::zeros(shape[0], shape[1]);
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let up = loss(&work);
            work.get_mut(id).data_mut()[j] = orig - step;
            let down = loss(&work);
            work.get_mut(id).data_mut()[j] = orig;
            grad.data_mut()[j] = (up - down) / (2.0 * step);
        }
        out.push(grad);
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps entries whose true
/// gradient is zero from dividing finite-difference roundoff by zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over all entries, with the location
/// `(tensor index, flat index)` where it occurs.
pub fn max_relative_error(
    analytic: &[Tensor<f64>],
    numeric: &[Tensor<f64>],
    floor: f64,
) -> (f64, Option<(usize, usize)>) {
    let mut worst = 0.0;
    let mut at = None;
    for (ti, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(x, y, floor);
            if e > worst || at.is_none() {
                worst = f64::max(worst, e);
                at = Some((ti, j));
            }
        }
    }
    (worst, at)
}
