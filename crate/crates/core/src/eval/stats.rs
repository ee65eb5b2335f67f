use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// 1-based ranks with ties sharing their average rank.
pub(crate) fn rank_average(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

/// Student t-test on the paired differences `a - b`.
///
/// Constant differences have no variance: the result is `p = 1` when they are
/// all zero and `p = 0` (with a warning) otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs two equal samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let k = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let df = k - 1.0;
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TTest { t: 0.0, df, p: 1.0 });
        }
        log::warn!("paired differences have zero variance; reporting p = 0");
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            df,
            p: 0.0,
        });
    }
    let t = mean / (var / k).sqrt();
    Ok(TTest {
        t,
        df,
        p: two_sided(t, df),
    })
}

/// Welch's unpaired t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("welch t-test needs two samples of size >= 2".into()));
    }
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (n, m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        let p = if ma == mb { 1.0 } else { 0.0 };
        return Ok(TTest { t: 0.0, df: na + nb - 2.0, p });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    Ok(TTest {
        t,
        df,
        p: two_sided(t, df),
    })
}

/// Benjamini-Hochberg adjusted p-values,
/// `min_{j >= i} min(1, m·p_(j)/j)` in original order.
pub fn bh_adjusted(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    adjusted
}

/// Step-up rejections at false discovery rate `q`.
pub fn benjamini_hochberg(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len() as f64;
    let mut sorted: Vec<f64> = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = sorted
        .iter()
        .enumerate()
        .filter(|(i, &v)| v <= (*i + 1) as f64 * q / m)
        .map(|(_, &v)| v)
        .last();
    p.iter().map(|&v| cutoff.is_some_and(|c| v <= c)).collect()
}

pub fn bonferroni(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len() as f64;
    p.iter().map(|&v| v <= q / m).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

/// Mean rank of each model (rows of `table`) across datasets (columns);
/// rank 1 is best and ties share their average rank.
pub fn average_ranks(table: &[Vec<f64>], directions: &[Direction]) -> Result<Vec<f64>> {
    let models = table.len();
    if models == 0 || directions.is_empty() {
        return Err(Error::InvalidArgument("rank table is empty".into()));
    }
    if let Some(row) = table.iter().position(|r| r.len() != directions.len()) {
        return Err(Error::InvalidArgument(format!(
            "model {row} has {} results for {} datasets",
            table[row].len(),
            directions.len()
        )));
    }
    let mut totals = vec![0.0; models];
    for (c, dir) in directions.iter().enumerate() {
        let column: Vec<f64> = table
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let v = row[c];
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "missing result for model {r}, dataset {c}"
                    )));
                }
                Ok(match dir {
                    Direction::LowerIsBetter => v,
                    Direction::HigherIsBetter => -v,
                })
            })
            .collect::<Result<_>>()?;
        for (t, r) in totals.iter_mut().zip(rank_average(&column)) {
            *t += r;
        }
    }
    Ok(totals.into_iter().map(|t| t / directions.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_share_ties() {
        assert_eq!(rank_average(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.4, 0.5, 0.45];
        assert_eq!(paired_t_test(&a, &a).unwrap().p, 1.0);
    }

    #[test]
    fn constant_shift_gives_p_zero() {
        let a = [2.0; 5];
        let b = [1.0; 5];
        assert_eq!(paired_t_test(&a, &b).unwrap().p, 0.0);
    }

    #[test]
    fn bh_edge_cases() {
        assert_eq!(benjamini_hochberg(&[0.0, 0.0, 0.0], 0.05), vec![true; 3]);
        assert_eq!(benjamini_hochberg(&[0.04], 0.05), vec![true]);
        assert_eq!(benjamini_hochberg(&[0.06], 0.05), vec![false]);
    }

    #[test]
    fn adjusted_values_agree_with_step_up() {
        let p = [0.01, 0.04, 0.03, 0.2, 0.011];
        for q in [0.01, 0.05, 0.1] {
            let from_adjusted: Vec<bool> = bh_adjusted(&p).iter().map(|&a| a <= q).collect();
            assert_eq!(from_adjusted, benjamini_hochberg(&p, q));
        }
    }

    #[test]
    fn rank_basics() {
        assert_eq!(average_ranks(&[vec![0.3, 0.1]], &[Direction::LowerIsBetter; 2]).unwrap(), vec![1.0]);
        let r = average_ranks(
            &[vec![0.1, 0.9], vec![0.2, 0.8]],
            &[Direction::LowerIsBetter, Direction::HigherIsBetter],
        )
        .unwrap();
        assert_eq!(r, vec![1.0, 2.0]);
        assert!(average_ranks(&[vec![f64::NAN]], &[Direction::LowerIsBetter]).is_err());
    }
}
