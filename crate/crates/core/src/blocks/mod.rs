//! Sequence-mixing blocks: the selective-SSM Mamba block, its bidirectional
//! wrapper, the feature interaction layer and a post-norm attention block.

mod attention;
mod mamba;

pub use attention::{AttentionBlock, AttentionConfig};
pub use mamba::{bidirectional_forward, MambaBlock, MambaConfig, NORM_EPS};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::numerics::{Bound, Graph, ParamId, ParamSet, Tensor, Var};

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
        .expect("length matches shape")
}

/// Learned linear mixing along the feature axis.
#[derive(Clone, Debug)]
pub struct Interaction {
    pub w: ParamId,
    pub len: usize,
}

impl Interaction {
    /// Starts at the identity, so an untrained layer leaves tokens unchanged.
    pub fn new(params: &mut ParamSet, prefix: &str, len: usize) -> Result<Self> {
        let w = params.insert(format!("{prefix}.w"), Tensor::identity(len))?;
        Ok(Self { w, len })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        interaction_apply(g, z, p[self.w])
    }
}

/// `out[n, k, c] = Σ_j W[j, k]·z[n, j, c]` for `z[N, J, d]` and `W[J, J]`.
pub fn interaction_apply(g: &mut Graph, z: Var, w: Var) -> Result<Var> {
    let (zs, ws) = (g.shape(z).to_vec(), g.shape(w).to_vec());
    if zs.len() != 3 || ws != [zs[1], zs[1]] {
        return Err(dim_err("interaction", &zs, &ws));
    }
    let t = g.permute(z, &[0, 2, 1])?;
    let mixed = g.linear(t, w, None)?;
    g.permute(mixed, &[0, 2, 1])
}
