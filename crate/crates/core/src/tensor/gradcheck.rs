//! Central-difference verification of analytic gradients (64-bit).

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, 1e-12)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

const STENCIL: [f64; 5] = [2100.0, -600.0, 150.0, -25.0, 2.0];

/// Tenth-order central differences of a scalar function of a flat parameter
/// vector: `(2100 d₁ − 600 d₂ + 150 d₃ − 25 d₄ + 2 d₅) / 2520h` with
/// `dₖ = f(x+kh) − f(x−kh)`.
pub fn central_differences(values: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = values.to_vec();
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let mut at = |offset: f64| -> Result<f64> {
            probe[i] = values[i] + offset;
            f(&probe)
        };
        let mut sum = 0.0;
        for (k, w) in STENCIL.iter().enumerate() {
            let h = (k + 1) as f64 * eps;
            sum += w * (at(h)? - at(-h)?);
        }
        probe[i] = values[i];
        out.push(sum / (2520.0 * eps));
    }
    Ok(out)
}

/// Compares the gradient of a scalar graph function at `x` with central
/// differences and returns the maximum relative error.
///
/// `f` receives a graph it must record onto (it may swap in its own graph
/// built from the one passed, e.g. with `std::mem::take`). The perturbed
/// evaluations replay the rectifier active sets of the base evaluation, so a
/// perturbation that crosses a rectifier kink does not corrupt the difference.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let tracked = x.value_only().requires_grad();
    let mut g = Graph::recording_relu_patterns();
    let xv = g.leaf(&tracked);
    let y = f(&mut g, xv)?;
    let grads = g.backward(y)?;
    let analytic: Vec<f64> = grads
        .get(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);
    let patterns = g.into_relu_patterns();

    let numeric = central_differences(x.data(), eps, |vals| {
        let mut g = Graph::with_relu_patterns(patterns.clone());
        let xv = g.constant(Tensor::from_parts(x.shape().to_vec(), vals.to_vec()));
        let y = f(&mut g, xv)?;
        Ok(g.value(y).data()[0])
    })?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Outcome of a parameter-wise check.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Checks the gradient of `f` with respect to each listed store entry.
/// `f` must not mutate anything between calls and must record onto the graph
/// it is given; rectifier patterns are replayed as in [`grad_check`].
pub fn grad_check_params<F>(f: F, store: &ParamStore<f64>, ids: &[ParamId], eps: f64) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut base = store.clone();
    base.zero_grad();
    let mut g = Graph::recording_relu_patterns();
    let y = f(&mut g, &base)?;
    g.backward_into(y, &mut base)?;
    let patterns = g.into_relu_patterns();

    let mut probe = store.clone();
    let mut reports = Vec::with_capacity(ids.len());
    for &id in ids {
        let analytic: Vec<f64> = base
            .get(id)
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; base.get(id).numel()]);
        let original = store.get(id).clone();
        let numeric = central_differences(original.data(), eps, |vals| {
            let t = Tensor::from_parts(original.shape().to_vec(), vals.to_vec());
            probe.set_value(id, &t)?;
            let mut g = Graph::with_relu_patterns(patterns.clone());
            let y = f(&mut g, &probe)?;
            Ok(g.value(y).data()[0])
        })?;
        probe.set_value(id, &original)?;
        reports.push(ParamCheck {
            name: store.name(id).to_string(),
            max_rel_error: max_relative_error(&analytic, &numeric),
            checked: analytic.len(),
        });
    }
    Ok(reports)
}
