//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative error used throughout: `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }
    Ok(())
}

fn ensure_deterministic(first: f64, second: f64) -> Result<()> {
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    Ok(())
}

/// Compares the gradient of a scalar function of one tensor against central
/// differences and returns the largest relative error over all coordinates.
///
/// `f` builds the function inside a fresh graph from the leaf holding `θ`.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, NodeId) -> Result<NodeId>,
{
    check_eps(eps)?;
    let empty = ParamStore::new();
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new(&empty);
        let leaf = g.constant(t.clone());
        let out = f(&mut g, leaf)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new(&empty);
    let leaf = g.variable(theta.clone());
    let out = f(&mut g, leaf)?;
    let base = g.value(out).item();
    g.backward(out)?;
    let analytic = g.grad(leaf);
    ensure_deterministic(base, eval(theta)?)?;

    let mut worst = 0.0f64;
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

/// Gradient check over every trainable tensor of a parameter store.
///
/// `max_coords` caps the coordinates probed per tensor; probed coordinates
/// are spread evenly over the tensor so large matrices stay affordable.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    check_eps(eps)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let out = f(&mut g)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    let base = g.value(out).item();
    g.backward(out)?;
    let grads = g.param_grads();
    ensure_deterministic(base, eval(store)?)?;

    let mut probe = store.clone();
    let mut report = Vec::new();
    for (id, param) in store.iter() {
        if param.frozen {
            continue;
        }
        let analytic = grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(param.value.shape()));
        let n = param.value.len();
        let take = max_coords.unwrap_or(n).min(n).max(1);
        let mut worst = 0.0f64;
        for j in 0..take {
            let i = j * n / take;
            let orig = param.value.data()[i];
            probe.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        report.push(ParamCheck {
            name: param.name.clone(),
            coords_checked: take,
            max_relative_error: worst,
        });
    }
    Ok(GradCheckReport { params: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn quadratic_at_three() {
        let err = grad_check(
            |g, x| g.mul(x, x),
            &Tensor::scalar(3.0),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rejects_bad_step() {
        assert!(grad_check(|g, x| Ok(g.sum(x)), &Tensor::scalar(1.0), 1e-2).is_err());
    }

    #[test]
    fn detects_nondeterminism() {
        let calls = Cell::new(0u32);
        let res = grad_check(
            |g, x| {
                calls.set(calls.get() + 1);
                let s = g.sum(x);
                Ok(g.scale(s, calls.get() as f64))
            },
            &Tensor::scalar(1.0),
            1e-6,
        );
        assert!(matches!(res, Err(Error::NonDeterministic { .. })));
    }
}
