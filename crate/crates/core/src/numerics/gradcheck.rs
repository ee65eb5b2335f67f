use super::graph::{Graph, Var};
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over every parameter entry.
    pub max_rel_error: f64,
    /// Worst relative error per named tensor, in parameter order.
    pub per_tensor: Vec<(String, f64)>,
}

pub const DEFAULT_STEP: f64 = 1e-3;

/// Denominator floor used by [`check_gradients`].
pub const DEFAULT_FLOOR: f64 = 1e-8;

fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare reverse-mode gradients of a scalar graph against the fourth-order
/// central difference `(−f(θ+2h) + 8f(θ+h) − 8f(θ−h) + f(θ−2h)) / 12h`.
///
/// Relative errors use the denominator `max(|a|, |n|, 1e-8)`.
///
/// `build` must construct the same scalar loss from the bound parameters on
/// every call.
pub fn check_gradients<F>(build: F, params: &ParamSet, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    check_gradients_with_floor(build, params, step, DEFAULT_FLOOR)
}

/// [`check_gradients`] with a chosen denominator floor. Entries whose
/// gradients sit below the floor are then judged by absolute error
/// `floor · tolerance`; useful when the loss is large relative to some
/// derivatives and roundoff in `f` dominates the difference quotient.
pub fn check_gradients_with_floor<F>(
    build: F,
    params: &ParamSet,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    if step <= 0.0 || floor <= 0.0 {
        return Err(Error::InvalidArgument("step and floor must be positive".into()));
    }
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let loss = build(&mut g, &bound)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let loss = build(&mut g, &bound)?;
    let mut grads = g.backward(loss)?;
    let analytic = bound.gradients(params, &mut grads);

    let mut work = params.clone();
    let mut per_tensor = Vec::with_capacity(params.len());
    let mut worst = 0.0f64;
    for (id, name, tensor) in params.iter() {
        let mut tensor_worst = 0.0f64;
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[i] = orig + offset;
                eval(&work)
            };
            let (p2, p1, m1, m2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            tensor_worst = tensor_worst.max(relative_error(analytic[id.index()].data()[i], numeric, floor));
        }
        worst = worst.max(tensor_worst);
        per_tensor.push((name.to_string(), tensor_worst));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        per_tensor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let mut params = ParamSet::new();
        let w = params.insert("w", Tensor::from_vec(vec![0.3, -1.2, 2.0])).unwrap();
        let report = check_gradients(
            |g, b| {
                let c = g.constant(Tensor::from_vec(vec![1.5, 2.0, -0.5]));
                let p = g.mul(b[w], c)?;
                g.sum_all(p)
            },
            &params,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn quadratic_is_tight() {
        let mut params = ParamSet::new();
        let w = params.insert("w", Tensor::from_vec(vec![0.7, -1.3])).unwrap();
        let report = check_gradients(
            |g, b| {
                let sq = g.square(b[w]);
                g.sum_all(sq)
            },
            &params,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }
}
