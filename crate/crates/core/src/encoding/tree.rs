use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Impurity used when growing bin trees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeCriterion {
    SquaredError,
    Gini,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PleConfig {
    pub max_bins: usize,
    pub min_leaf: usize,
    pub criterion: TreeCriterion,
}

pub const DEFAULT_MIN_LEAF: usize = 64;

impl PleConfig {
    pub fn new(max_bins: usize, criterion: TreeCriterion) -> Self {
        Self {
            max_bins,
            min_leaf: DEFAULT_MIN_LEAF,
            criterion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_bins < 2 {
            return Err(Error::Config(format!(
                "max_bins must be at least 2, got {}",
                self.max_bins
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be positive".into()));
        }
        Ok(())
    }
}

/// Bin edges `b_0 < b_1 < ... < b_T` of one numeric feature.
///
/// The outer edges are the training minimum and maximum; the interior edges
/// are tree thresholds. A constant feature has the single degenerate bin
/// `[c, c]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinBoundaries {
    edges: Vec<f64>,
}

impl BinBoundaries {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        let ok = edges.len() >= 2
            && edges.iter().all(|e| e.is_finite())
            && (edges.len() == 2 && edges[0] <= edges[1]
                || edges.windows(2).all(|w| w[0] < w[1]));
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "bin edges must be finite and strictly increasing: {edges:?}"
            )));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Tree thresholds, excluding the outer edges.
    pub fn interior(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }
}

/// Per-node sufficient statistics over a sorted range.
struct Prefix {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Prefix {
    fn new(y: &[f64]) -> Self {
        let mut sum = vec![0.0; y.len() + 1];
        let mut sum_sq = vec![0.0; y.len() + 1];
        for (i, v) in y.iter().enumerate() {
            sum[i + 1] = sum[i] + v;
            sum_sq[i + 1] = sum_sq[i] + v * v;
        }
        Self { sum, sum_sq }
    }

    /// Node impurity times node size on `lo..hi`.
    fn cost(&self, criterion: TreeCriterion, lo: usize, hi: usize) -> f64 {
        let n = (hi - lo) as f64;
        let s = self.sum[hi] - self.sum[lo];
        match criterion {
            TreeCriterion::SquaredError => {
                let sq = self.sum_sq[hi] - self.sum_sq[lo];
                (sq - s * s / n).max(0.0)
            }
            // For 0/1 labels, s is the positive count.
            TreeCriterion::Gini => {
                let p = s / n;
                n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
            }
        }
    }

    fn scale(&self, lo: usize, hi: usize) -> f64 {
        self.sum_sq[hi] - self.sum_sq[lo]
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    lo: usize,
    hi: usize,
    /// Rows `lo..cut` go left.
    cut: usize,
    threshold: f64,
    gain: f64,
}

fn best_split(
    xs: &[f64],
    prefix: &Prefix,
    cfg: &PleConfig,
    lo: usize,
    hi: usize,
) -> Option<Candidate> {
    if hi - lo < 2 * cfg.min_leaf {
        return None;
    }
    let parent = prefix.cost(cfg.criterion, lo, hi);
    let floor = 1e-12 * prefix.scale(lo, hi).max(f64::MIN_POSITIVE);
    let mut best: Option<Candidate> = None;
    for cut in lo + cfg.min_leaf..=hi - cfg.min_leaf {
        if xs[cut - 1] == xs[cut] {
            continue;
        }
        let gain =
            parent - prefix.cost(cfg.criterion, lo, cut) - prefix.cost(cfg.criterion, cut, hi);
        if gain > floor && best.map_or(true, |b| gain > b.gain) {
            best = Some(Candidate {
                lo,
                hi,
                cut,
                threshold: 0.5 * (xs[cut - 1] + xs[cut]),
                gain,
            });
        }
    }
    best
}

/// Bin edges from a best-first single-feature regression or classification
/// tree grown to at most `max_bins` leaves.
///
/// At each step the leaf whose best split removes the most impurity is split.
/// Ties go to the lower threshold. Both children must keep `min_leaf` rows.
pub fn fit_tree_bins(x: &[f64], y: &[f64], cfg: &PleConfig) -> Result<BinBoundaries> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature values but {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot fit bins on an empty column".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("bin fitting needs finite inputs".into()));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let (lo_edge, hi_edge) = (xs[0], xs[xs.len() - 1]);
    if lo_edge == hi_edge {
        return BinBoundaries::new(vec![lo_edge, hi_edge]);
    }
    let prefix = Prefix::new(&ys);

    let mut frontier: Vec<Candidate> = best_split(&xs, &prefix, cfg, 0, xs.len())
        .into_iter()
        .collect();
    let mut thresholds = Vec::new();
    while thresholds.len() + 1 < cfg.max_bins {
        let Some(pick) = frontier
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.gain
                    .partial_cmp(&b.gain)
                    .unwrap_or(Ordering::Equal)
                    .then(b.threshold.total_cmp(&a.threshold))
            })
            .map(|(i, _)| i)
        else {
            break;
        };
        let c = frontier.swap_remove(pick);
        thresholds.push(c.threshold);
        frontier.extend(best_split(&xs, &prefix, cfg, c.lo, c.cut));
        frontier.extend(best_split(&xs, &prefix, cfg, c.cut, c.hi));
    }
    thresholds.sort_by(f64::total_cmp);
    let mut edges = Vec::with_capacity(thresholds.len() + 2);
    edges.push(lo_edge);
    edges.extend(thresholds);
    edges.push(hi_edge);
    BinBoundaries::new(edges)
}
