use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::uniform_init;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{Bound, Graph, ParamId, ParamSet, Tensor, Var};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub attention_dropout: f64,
    pub ff_dropout: f64,
}

/// Post-norm transformer encoder block with a ReGLU feed-forward.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub config: AttentionConfig,
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    norm1: (ParamId, ParamId),
    ff_in: (ParamId, ParamId),
    ff_out: (ParamId, ParamId),
    norm2: (ParamId, ParamId),
}

impl AttentionBlock {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: AttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let AttentionConfig { d, heads, ff_dim, .. } = config;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "embedding dim {d} is not divisible by {heads} heads"
            )));
        }
        if ff_dim == 0 {
            return Err(Error::Config("attention ff_dim must be positive".into()));
        }
        let mut linear = |name: &str, din: usize, dout: usize| -> Result<(ParamId, ParamId)> {
            let w = params.insert(format!("{prefix}.{name}.w"), uniform_init(rng, &[din, dout], din))?;
            let b = params.insert(format!("{prefix}.{name}.b"), uniform_init(rng, &[dout], din))?;
            Ok((w, b))
        };
        let wq = linear("q", d, d)?;
        let wk = linear("k", d, d)?;
        let wv = linear("v", d, d)?;
        let wo = linear("o", d, d)?;
        let ff_in = linear("ff_in", d, 2 * ff_dim)?;
        let ff_out = linear("ff_out", ff_dim, d)?;
        let mut norm = |name: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                params.insert(format!("{prefix}.{name}.w"), Tensor::ones(&[d]))?,
                params.insert(format!("{prefix}.{name}.b"), Tensor::zeros(&[d]))?,
            ))
        };
        let norm1 = norm("norm1")?;
        let norm2 = norm("norm2")?;
        Ok(Self {
            config,
            wq,
            wk,
            wv,
            wo,
            norm1,
            ff_in,
            ff_out,
            norm2,
        })
    }

    /// Value projection parameters, exposed for tests that silence attention.
    pub fn value_params(&self) -> (ParamId, ParamId) {
        self.wv
    }

    fn heads(&self, g: &mut Graph, p: &Bound, x: Var, w: (ParamId, ParamId)) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let h = self.config.heads;
        let t = g.linear(x, p[w.0], Some(p[w.1]))?;
        let t = g.reshape(t, &[s[0], s[1], h, s[2] / h])?;
        g.permute(t, &[0, 2, 1, 3])
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.config.d {
            return Err(dim_err("attention_block", &s, &[self.config.d]));
        }
        let (n, j, d) = (s[0], s[1], s[2]);
        let dh = d / self.config.heads;

        let q = self.heads(g, p, x, self.wq)?;
        let k = self.heads(g, p, x, self.wk)?;
        let v = self.heads(g, p, x, self.wv)?;
        let kt = g.permute(k, &[0, 1, 3, 2])?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scores);
        let attn = g.dropout(attn, self.config.attention_dropout)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[n, j, d])?;
        let out = g.linear(ctx, p[self.wo.0], Some(p[self.wo.1]))?;
        let x1 = g.add(x, out)?;
        let x1 = g.layernorm(x1, p[self.norm1.0], p[self.norm1.1], LAYER_NORM_EPS)?;

        let ff = self.config.ff_dim;
        let h = g.linear(x1, p[self.ff_in.0], Some(p[self.ff_in.1]))?;
        let a = g.index_select(h, 2, (0..ff).collect())?;
        let b = g.index_select(h, 2, (ff..2 * ff).collect())?;
        let b = g.unary(crate::numerics::Elementwise::Relu, b);
        let h = g.mul(a, b)?;
        let h = g.dropout(h, self.config.ff_dropout)?;
        let h = g.linear(h, p[self.ff_out.0], Some(p[self.ff_out.1]))?;
        let x2 = g.add(x1, h)?;
        g.layernorm(x2, p[self.norm2.0], p[self.norm2.1], LAYER_NORM_EPS)
    }
}
