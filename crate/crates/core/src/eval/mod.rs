//! Metrics, fold aggregation, significance tests and rank summaries.

mod report;
mod stats;

pub use report::{
    aggregate, compare, Aggregate, ComparisonReport, ComparisonRow, FoldResult, Metric,
};
pub use stats::{
    average_ranks, benjamini_hochberg, bh_adjusted, bonferroni, paired_t_test, welch_t_test,
    Direction, TTest,
};

use statrs::function::erf::erf;

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "{what} needs equal non-empty inputs, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mse(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pred, y, "mse")?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Area under the ROC curve from the Mann-Whitney statistic with average
/// ranks for ties.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(scores, labels, "auc")?;
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::InvalidArgument("auc labels must be 0 or 1".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("auc needs both classes present".into()));
    }
    let ranks = stats::rank_average(scores);
    let pos_rank: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1.0)
        .map(|(r, _)| r)
        .sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank - p * (p + 1.0) / 2.0) / (p * n))
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Closed-form CRPS of `N(mu, sigma²)` at observation `y`.
pub fn crps_normal(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("crps needs sigma > 0, got {sigma}")));
    }
    let z = (y - mu) / sigma;
    Ok(sigma
        * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z)
            - 1.0 / std::f64::consts::PI.sqrt()))
}

/// Mean CRPS over rows.
pub fn mean_crps(mu: &[f64], sigma: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(mu, y, "crps")?;
    check_pair(sigma, y, "crps")?;
    let mut total = 0.0;
    for ((&m, &s), &t) in mu.iter().zip(sigma).zip(y) {
        total += crps_normal(m, s, t)?;
    }
    Ok(total / y.len() as f64)
}

/// Mean normal negative log-likelihood.
pub fn mean_normal_nll(mu: &[f64], sigma: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(mu, y, "nll")?;
    check_pair(sigma, y, "nll")?;
    let c = 0.5 * (2.0 * std::f64::consts::PI).ln();
    Ok(mu
        .iter()
        .zip(sigma)
        .zip(y)
        .map(|((m, s), t)| c + s.ln() + (t - m).powi(2) / (2.0 * s * s))
        .sum::<f64>()
        / y.len() as f64)
}
