use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::uniform_init;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{Bound, Elementwise, Graph, ParamId, ParamSet, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;
const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MambaConfig {
    pub d: usize,
    pub expand: usize,
    pub kernel: usize,
    pub state: usize,
    /// Rank of the Δ projection; values at or above `expand * d` use a
    /// full-rank map.
    pub dt_rank: usize,
}

impl MambaConfig {
    pub fn inner(&self) -> usize {
        self.expand * self.d
    }

    fn low_rank(&self) -> bool {
        self.dt_rank < self.inner()
    }
}

#[derive(Clone, Debug)]
enum DeltaProj {
    Full { w: ParamId },
    LowRank { down: ParamId, up: ParamId },
}

/// Parameters of one Mamba block.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub config: MambaConfig,
    pub norm: ParamId,
    pub in_main: ParamId,
    pub in_gate: ParamId,
    pub conv_kernel: ParamId,
    pub conv_bias: ParamId,
    pub a_log: ParamId,
    pub b_proj: ParamId,
    pub c_proj: ParamId,
    delta: DeltaProj,
    pub delta_bias: ParamId,
    pub alpha: ParamId,
    pub w_final: ParamId,
    pub b_final: ParamId,
    pub dropout: f64,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl MambaBlock {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: MambaConfig,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let MambaConfig {
            d,
            kernel,
            state,
            dt_rank,
            ..
        } = config;
        let e = config.inner();
        if d == 0 || config.expand == 0 || kernel == 0 || state == 0 || dt_rank == 0 {
            return Err(Error::Config(format!("degenerate Mamba block {config:?}")));
        }
        let mut add = |name: &str, t: Tensor| params.insert(format!("{prefix}.{name}"), t);
        let norm = add("norm", Tensor::ones(&[d]))?;
        let in_main = add("in_main", uniform_init(rng, &[d, e], d))?;
        let in_gate = add("in_gate", uniform_init(rng, &[d, e], d))?;
        let conv_kernel = add("conv_kernel", uniform_init(rng, &[e, kernel], kernel))?;
        let conv_bias = add("conv_bias", uniform_init(rng, &[e], kernel))?;
        let a_log = add(
            "a_log",
            Tensor::new(
                vec![e, state],
                (0..e * state).map(|i| ((i % state) as f64 + 1.0).ln()).collect(),
            )?,
        )?;
        let b_proj = add("b_proj", uniform_init(rng, &[e, state], e))?;
        let c_proj = add("c_proj", uniform_init(rng, &[e, state], e))?;
        let delta = if config.low_rank() {
            DeltaProj::LowRank {
                down: add("dt_down", uniform_init(rng, &[e, dt_rank], e))?,
                up: add("dt_up", uniform_init(rng, &[dt_rank, e], dt_rank))?,
            }
        } else {
            DeltaProj::Full {
                w: add("dt_proj", uniform_init(rng, &[e, e], e))?,
            }
        };
        let (lo, hi) = (DT_MIN.ln(), DT_MAX.ln());
        let dt_bias: Vec<f64> = (0..e)
            .map(|_| inverse_softplus(rng.gen_range(lo..hi).exp()))
            .collect();
        let delta_bias = add("dt_bias", Tensor::from_vec(dt_bias))?;
        let alpha = add("alpha", Tensor::ones(&[e]))?;
        let w_final = add("w_final", uniform_init(rng, &[e, d], e))?;
        let b_final = add("b_final", uniform_init(rng, &[d], e))?;
        Ok(Self {
            config,
            norm,
            in_main,
            in_gate,
            conv_kernel,
            conv_bias,
            a_log,
            b_proj,
            c_proj,
            delta,
            delta_bias,
            alpha,
            w_final,
            b_final,
            dropout,
        })
    }

    /// Residual block `x + W_final·(scan(silu(conv(W_in·r))) ⊙ silu(W_gate·r)) + b_final`
    /// with `r = rmsnorm(x)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[2] != self.config.d {
            return Err(dim_err("mamba_block", &xs, &[self.config.d]));
        }
        let r = g.rmsnorm(x, p[self.norm], NORM_EPS)?;
        let main = g.linear(r, p[self.in_main], None)?;
        let main = g.causal_conv(main, p[self.conv_kernel], p[self.conv_bias])?;
        let u = g.silu(main);
        let gate = g.linear(r, p[self.in_gate], None)?;
        let gate = g.silu(gate);

        let dt = match self.delta {
            DeltaProj::Full { w } => g.linear(u, p[w], Some(p[self.delta_bias]))?,
            DeltaProj::LowRank { down, up } => {
                let low = g.linear(u, p[down], None)?;
                g.linear(low, p[up], Some(p[self.delta_bias]))?
            }
        };
        let dt = g.softplus(dt);
        let a = g.unary(Elementwise::NegExp, p[self.a_log]);
        let b = g.linear(u, p[self.b_proj], None)?;
        let c = g.linear(u, p[self.c_proj], None)?;
        let y = g.selective_scan(u, dt, a, b, c, p[self.alpha])?;

        let gated = g.mul(y, gate)?;
        let out = g.linear(gated, p[self.w_final], Some(p[self.b_final]))?;
        let out = g.dropout(out, self.dropout)?;
        g.add(x, out)
    }
}

/// `fwd(x) + flip(bwd(flip(x)))`, flipping along the sequence axis.
pub fn bidirectional_forward(
    g: &mut Graph,
    p: &Bound,
    x: Var,
    fwd: &MambaBlock,
    bwd: &MambaBlock,
) -> Result<Var> {
    let a = fwd.forward(g, p, x)?;
    let rx = g.flip(x, 1)?;
    let b = bwd.forward(g, p, rx)?;
    let b = g.flip(b, 1)?;
    g.add(a, b)
}
