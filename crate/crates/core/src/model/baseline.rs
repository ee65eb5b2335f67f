use nalgebra::{DMatrix, DVector};

use crate::data::{FeatureValues, TabularDataset, Task};
use crate::encoding::{Preprocessor, Slot};
use crate::error::{Error, Result};
use crate::numerics::kernels::sigmoid;

const RIDGE: f64 = 1e-8;
const NEWTON_ITERS: usize = 100;
const NEWTON_TOL: f64 = 1e-10;

/// Linear or logistic regression on min-max scaled numerics and one-hot
/// categoricals, sharing the preprocessing of the neural model.
#[derive(Clone, Debug)]
pub struct LinearBaseline {
    pub task: Task,
    /// Intercept first, then one weight per design column.
    pub coefficients: Vec<f64>,
    pre: Preprocessor,
}

impl LinearBaseline {
    /// Fit on `train`, with the target transformed like the neural model's.
    pub fn fit(train: &TabularDataset, pre: &Preprocessor) -> Result<Self> {
        let x = design(train, pre)?;
        let y = if train.task.is_regression() {
            pre.target.transform_all(&train.target)
        } else {
            train.target.clone()
        };
        let y = DVector::from_vec(y);
        let coefficients = match train.task {
            Task::Binary => logistic(&x, &y)?,
            _ => ridge(&x, &y)?,
        };
        Ok(Self {
            task: train.task,
            coefficients: coefficients.iter().copied().collect(),
            pre: pre.clone(),
        })
    }

    /// Normalized-scale predictions, or probabilities for binary tasks.
    pub fn predict(&self, data: &TabularDataset) -> Result<Vec<f64>> {
        let x = design(data, &self.pre)?;
        let eta = &x * DVector::from_column_slice(&self.coefficients);
        Ok(match self.task {
            Task::Binary => eta.iter().map(|&v| sigmoid(v)).collect(),
            _ => eta.iter().copied().collect(),
        })
    }
}

/// Design matrix with a leading intercept column. Each categorical feature
/// contributes indicators for its second and later training levels, so the
/// first level and unseen values share the baseline.
fn design(data: &TabularDataset, pre: &Preprocessor) -> Result<DMatrix<f64>> {
    let n = data.n_rows();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (name, slot) in pre.names.iter().zip(&pre.slots) {
        let feature = data
            .feature(name)
            .ok_or_else(|| Error::Schema(format!("input lacks feature `{name}`")))?;
        match (slot, &feature.values) {
            (Slot::Numeric(c), FeatureValues::Numeric(v)) => {
                columns.push(v.iter().map(|&x| pre.scaler.scale_value(*c, x)).collect());
            }
            (Slot::Categorical(c), FeatureValues::Categorical(v)) => {
                let vocab = &pre.vocabs[*c];
                let ids: Vec<usize> = v.iter().map(|s| vocab.id(s)).collect();
                for level in 2..vocab.len() {
                    columns.push(ids.iter().map(|&i| f64::from(u8::from(i == level))).collect());
                }
            }
            _ => return Err(Error::Schema(format!("feature `{name}` changed kind"))),
        }
    }
    Ok(DMatrix::from_fn(n, columns.len(), |r, c| columns[c][r]))
}

/// Solve `(XᵀX + λD)β = Xᵀy` with `D` sparing the intercept.
fn penalized_solve(xtx: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let mut lambda = RIDGE;
    for _ in 0..12 {
        let mut a = xtx.clone();
        for i in 1..a.nrows() {
            a[(i, i)] += lambda;
        }
        if let Some(ch) = a.cholesky() {
            return Ok(ch.solve(&rhs));
        }
        log::warn!("design matrix is singular at ridge {lambda:e}; increasing");
        lambda *= 10.0;
    }
    Err(Error::InvalidArgument("linear baseline design matrix is singular".into()))
}

fn ridge(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    penalized_solve(x.transpose() * x, x.transpose() * y)
}

/// Newton iterations on the lightly penalized logistic log-likelihood.
fn logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    for _ in 0..NEWTON_ITERS {
        let eta = x * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let mut grad = x.transpose() * (y - &mu);
        for i in 1..p {
            grad[i] -= RIDGE * beta[i];
        }
        let xw = DMatrix::from_fn(x.nrows(), p, |r, c| x[(r, c)] * w[r]);
        let step = penalized_solve(x.transpose() * xw, grad)?;
        beta += &step;
        if step.amax() < NEWTON_TOL {
            break;
        }
    }
    Ok(beta)
}
