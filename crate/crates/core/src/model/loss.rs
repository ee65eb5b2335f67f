use crate::error::{dim_err, Result};
use crate::numerics::{Graph, Var};

/// Lower bound added to the softplus scale of the normal head.
pub const SIGMA_FLOOR: f64 = 1e-6;

fn check(g: &Graph, pred: Var, y: Var, width: usize) -> Result<()> {
    let (ps, ys) = (g.shape(pred), g.shape(y));
    if ps.len() != 2 || ps[1] != width || ys != [ps[0], 1] {
        return Err(dim_err("loss", ps, ys));
    }
    Ok(())
}

/// Mean squared error of `pred[N, 1]` against `y[N, 1]`.
pub fn mse_loss(g: &mut Graph, pred: Var, y: Var) -> Result<Var> {
    check(g, pred, y, 1)?;
    let r = g.sub(pred, y)?;
    let sq = g.square(r);
    g.mean_all(sq)
}

/// Mean binary cross-entropy on logits, `softplus(l) - y·l`.
pub fn bce_with_logits(g: &mut Graph, logits: Var, y: Var) -> Result<Var> {
    check(g, logits, y, 1)?;
    let sp = g.softplus(logits);
    let yl = g.mul(y, logits)?;
    let l = g.sub(sp, yl)?;
    g.mean_all(l)
}

/// Mean normal negative log-likelihood for `out[N, 2] = (μ, σ_raw)` with
/// `σ = softplus(σ_raw) + 1e-6`.
pub fn normal_nll(g: &mut Graph, out: Var, y: Var) -> Result<Var> {
    check(g, out, y, 2)?;
    let mu = g.index_select(out, 1, vec![0])?;
    let raw = g.index_select(out, 1, vec![1])?;
    let sigma = g.softplus(raw);
    let sigma = g.add_scalar(sigma, SIGMA_FLOOR);
    let log_sigma = g.log(sigma);
    let r = g.sub(y, mu)?;
    let r2 = g.square(r);
    let neg2 = g.scale(log_sigma, -2.0);
    let inv_var = g.exp(neg2);
    let quad = g.mul(r2, inv_var)?;
    let quad = g.scale(quad, 0.5);
    let nll = g.add(log_sigma, quad)?;
    let nll = g.add_scalar(nll, 0.5 * (2.0 * std::f64::consts::PI).ln());
    g.mean_all(nll)
}
