//! End-to-end model: feature embeddings, the block stack, pooling and heads.

mod baseline;
mod config;
mod loss;

use serde::{Deserialize, Serialize};

pub use baseline::LinearBaseline;
pub use config::{Architecture, Head, ModelConfig, Pooling};
pub use loss::{bce_with_logits, mse_loss, normal_nll, SIGMA_FLOOR};

use crate::blocks::{
    bidirectional_forward, uniform_init, AttentionBlock, AttentionConfig, Interaction, MambaBlock,
    MambaConfig,
};
use crate::data::TargetScaler;
use crate::encoding::{EncodedData, Preprocessor, Slot};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{kernels, Bound, Graph, ParamId, ParamSet, Reduction, Tensor, Var};
use crate::rng;

/// Shape of the model input, as produced by a fitted [`Preprocessor`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    /// PLE width of each numeric feature.
    pub width: usize,
    /// Sequence position to block slot.
    pub slots: Vec<Slot>,
    /// Vocabulary size of each categorical feature, unknown id included.
    pub vocab_sizes: Vec<usize>,
}

impl InputLayout {
    pub fn of(pre: &Preprocessor) -> Self {
        Self {
            width: pre.width,
            slots: pre.slots.clone(),
            vocab_sizes: pre.vocab_sizes(),
        }
    }

    pub fn n_numeric(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Numeric(_))).count()
    }

    pub fn n_categorical(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn n_features(&self) -> usize {
        self.slots.len()
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Mamba(MambaBlock),
    Bidirectional(MambaBlock, MambaBlock),
    Attention(AttentionBlock),
}

/// Model outputs on the training target scale.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Regression(Vec<f64>),
    /// Positive-class probabilities.
    Binary(Vec<f64>),
    Normal { mu: Vec<f64>, sigma: Vec<f64> },
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Regression(v) | Predictions::Binary(v) => v.len(),
            Predictions::Normal { mu, .. } => mu.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point predictions: the mean, or the probability for binary heads.
    pub fn point(&self) -> &[f64] {
        match self {
            Predictions::Regression(v) | Predictions::Binary(v) => v,
            Predictions::Normal { mu, .. } => mu,
        }
    }

    /// Map regression outputs back to the original target units.
    pub fn denormalize(&self, scaler: &TargetScaler) -> Predictions {
        match self {
            Predictions::Regression(v) => Predictions::Regression(scaler.inverse_all(v)),
            Predictions::Binary(p) => Predictions::Binary(p.clone()),
            Predictions::Normal { mu, sigma } => Predictions::Normal {
                mu: scaler.inverse_all(mu),
                sigma: sigma.iter().map(|s| s * scaler.std).collect(),
            },
        }
    }
}

/// Number of rows per inference graph.
const PREDICT_CHUNK: usize = 512;

/// Mambular / MambAttention model with its parameters.
#[derive(Clone, Debug)]
pub struct Mambular {
    pub config: ModelConfig,
    pub layout: InputLayout,
    pub params: ParamSet,
    numeric: Option<(ParamId, ParamId)>,
    tables: Vec<ParamId>,
    cls: Option<ParamId>,
    interaction: Option<Interaction>,
    layers: Vec<Layer>,
    final_norm: ParamId,
    head: (ParamId, ParamId),
    /// Block-concatenated token index for each sequence position.
    order: Vec<usize>,
}

impl Mambular {
    pub fn new(config: ModelConfig, layout: InputLayout, seed: u64) -> Result<Self> {
        config.validate()?;
        let j = layout.n_features();
        if j == 0 {
            return Err(Error::Config("model needs at least one feature".into()));
        }
        if layout.width != config.max_bins() {
            return Err(Error::Config(format!(
                "input width {} does not match max_bins {}",
                layout.width,
                config.max_bins()
            )));
        }
        let jn = layout.n_numeric();
        let mut order: Vec<usize> = layout
            .slots
            .iter()
            .map(|s| match *s {
                Slot::Numeric(i) => i,
                Slot::Categorical(i) => jn + i,
            })
            .collect();
        if let Some(perm) = &config.permutation {
            crate::data::validate_permutation(perm, j)?;
            order = perm.iter().map(|&p| order[p]).collect();
        }

        let mut r = rng::stream(seed, "init");
        let mut params = ParamSet::new();
        let d = config.d;
        let w = layout.width;
        let numeric = if jn > 0 {
            Some((
                params.insert("embed.numeric.w", uniform_init(&mut r, &[jn, w, d], w))?,
                params.insert("embed.numeric.b", uniform_init(&mut r, &[jn, 1, d], w))?,
            ))
        } else {
            None
        };
        let tables = layout
            .vocab_sizes
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                params.insert(format!("embed.categorical.{i}"), uniform_init(&mut r, &[v, d], 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let cls = if config.pooling == Pooling::Cls {
            Some(params.insert("embed.cls", uniform_init(&mut r, &[1, 1, d], 1))?)
        } else {
            None
        };
        let seq_len = j + usize::from(cls.is_some());
        let interaction = if config.interaction {
            Some(Interaction::new(&mut params, "interaction", seq_len)?)
        } else {
            None
        };
        let mamba = MambaConfig {
            d,
            expand: config.expand,
            kernel: config.kernel_for(seq_len),
            state: config.state,
            dt_rank: config.dt_rank(),
        };
        let attention = AttentionConfig {
            d,
            heads: config.heads,
            ff_dim: config.ff_dim,
            attention_dropout: config.attention_dropout,
            ff_dropout: config.ff_dropout,
        };
        let mut layers = Vec::new();
        for (i, is_mamba) in config.block_pattern().into_iter().enumerate() {
            let prefix = format!("layers.{i}");
            let layer = if !is_mamba {
                Layer::Attention(AttentionBlock::new(&mut params, &prefix, attention, &mut r)?)
            } else if config.bidirectional {
                let f = MambaBlock::new(&mut params, &format!("{prefix}.fwd"), mamba, config.dropout, &mut r)?;
                let b = MambaBlock::new(&mut params, &format!("{prefix}.bwd"), mamba, config.dropout, &mut r)?;
                Layer::Bidirectional(f, b)
            } else {
                Layer::Mamba(MambaBlock::new(&mut params, &prefix, mamba, config.dropout, &mut r)?)
            };
            layers.push(layer);
        }
        let final_norm = params.insert("final_norm", Tensor::ones(&[d]))?;
        let k = config.head.outputs();
        let head = (
            params.insert("head.w", uniform_init(&mut r, &[d, k], d))?,
            params.insert("head.b", uniform_init(&mut r, &[k], d))?,
        );
        Ok(Self {
            config,
            layout,
            params,
            numeric,
            tables,
            cls,
            interaction,
            layers,
            final_norm,
            head,
            order,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Tokens `[N, J(+1), d]` in sequence order, cls appended last.
    pub fn embed(&self, g: &mut Graph, p: &Bound, batch: &EncodedData) -> Result<Var> {
        let n = batch.n_rows();
        let d = self.config.d;
        let mut parts = Vec::new();
        if let Some((w, b)) = self.numeric {
            let s = batch.numeric.shape();
            if s[1..] != [self.layout.n_numeric(), self.layout.width] {
                return Err(dim_err("embed numeric", s, &[self.layout.n_numeric(), self.layout.width]));
            }
            let x = g.constant(batch.numeric.clone());
            let x = g.permute(x, &[1, 0, 2])?;
            let h = g.matmul(x, p[w])?;
            let h = g.add(h, p[b])?;
            parts.push(g.permute(h, &[1, 0, 2])?);
        }
        let jc = self.tables.len();
        if batch.n_categorical != jc {
            return Err(dim_err("embed categorical", &[batch.n_categorical], &[jc]));
        }
        for (c, &table) in self.tables.iter().enumerate() {
            let ids = (0..n).map(|r| batch.categorical[r * jc + c]).collect();
            let e = g.embedding(p[table], ids)?;
            parts.push(g.reshape(e, &[n, 1, d])?);
        }
        let tokens = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
        let identity = self.order.iter().enumerate().all(|(i, &o)| i == o);
        let mut z = if identity {
            tokens
        } else {
            g.index_select(tokens, 1, self.order.clone())?
        };
        if let Some(cls) = self.cls {
            let zeros = g.constant(Tensor::zeros(&[n, 1, d]));
            let c = g.add(zeros, p[cls])?;
            z = g.concat(&[z, c], 1)?;
        }
        Ok(z)
    }

    /// Interaction, block stack and final norm over embedded tokens.
    pub fn contextualize(&self, g: &mut Graph, p: &Bound, mut z: Var) -> Result<Var> {
        if let Some(inter) = &self.interaction {
            z = inter.forward(g, p, z)?;
        }
        for layer in &self.layers {
            z = match layer {
                Layer::Mamba(b) => b.forward(g, p, z)?,
                Layer::Bidirectional(f, b) => bidirectional_forward(g, p, z, f, b)?,
                Layer::Attention(a) => a.forward(g, p, z)?,
            };
        }
        g.rmsnorm(z, p[self.final_norm], crate::blocks::NORM_EPS)
    }

    /// Pooled representation `[N, d]`.
    pub fn represent(&self, g: &mut Graph, p: &Bound, batch: &EncodedData) -> Result<Var> {
        let z = self.embed(g, p, batch)?;
        let h = self.contextualize(g, p, z)?;
        pool(g, h, self.config.pooling)
    }

    /// Raw head outputs `[N, 1]` or `[N, 2]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, batch: &EncodedData) -> Result<Var> {
        let h = self.represent(g, p, batch)?;
        g.linear(h, p[self.head.0], Some(p[self.head.1]))
    }

    /// Mean loss of the head's likelihood on `targets`.
    pub fn loss(&self, g: &mut Graph, out: Var, targets: &[f64]) -> Result<Var> {
        let y = g.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
        match self.config.head {
            Head::Regression => mse_loss(g, out, y),
            Head::Binary => bce_with_logits(g, out, y),
            Head::LssNormal => normal_nll(g, out, y),
        }
    }

    /// Raw outputs for every row, evaluated in chunks without gradients.
    pub fn raw_outputs(&self, data: &EncodedData) -> Result<Tensor> {
        let k = self.config.head.outputs();
        let mut out = Vec::with_capacity(data.n_rows() * k);
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        for chunk in rows.chunks(PREDICT_CHUNK) {
            let batch = data.select(chunk);
            let mut g = Graph::new();
            let p = self.params.bind_frozen(&mut g);
            let o = self.forward(&mut g, &p, &batch)?;
            out.extend_from_slice(g.value(o).data());
        }
        Tensor::new(vec![data.n_rows(), k], out)
    }

    pub fn predict(&self, data: &EncodedData) -> Result<Predictions> {
        let raw = self.raw_outputs(data)?;
        Ok(outputs_to_predictions(self.config.head, &raw))
    }

    /// Mean loss over `data` without gradients.
    pub fn evaluate_loss(&self, data: &EncodedData) -> Result<f64> {
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        let mut total = 0.0;
        for chunk in rows.chunks(PREDICT_CHUNK) {
            let batch = data.select(chunk);
            let mut g = Graph::new();
            let p = self.params.bind_frozen(&mut g);
            let o = self.forward(&mut g, &p, &batch)?;
            let l = self.loss(&mut g, o, &batch.target)?;
            total += g.value(l).item() * chunk.len() as f64;
        }
        Ok(total / data.n_rows().max(1) as f64)
    }
}

/// Convert raw head outputs into predictions.
pub fn outputs_to_predictions(head: Head, raw: &Tensor) -> Predictions {
    match head {
        Head::Regression => Predictions::Regression(raw.data().to_vec()),
        Head::Binary => Predictions::Binary(raw.data().iter().map(|&l| kernels::sigmoid(l)).collect()),
        Head::LssNormal => {
            let (mu, sigma) = raw
                .data()
                .chunks(2)
                .map(|r| (r[0], kernels::softplus(r[1]) + SIGMA_FLOOR))
                .unzip();
            Predictions::Normal { mu, sigma }
        }
    }
}

/// Reduce `h[N, L, d]` over the sequence axis.
pub fn pool(g: &mut Graph, h: Var, pooling: Pooling) -> Result<Var> {
    let s = g.shape(h).to_vec();
    if s.len() != 3 {
        return Err(dim_err("pool", &s, &[0, 0, 0]));
    }
    match pooling {
        Pooling::Avg => g.reduce(Reduction::Mean, h, 1),
        Pooling::Sum => g.reduce(Reduction::Sum, h, 1),
        Pooling::Max => g.reduce(Reduction::Max, h, 1),
        // The cls token is the last position.
        Pooling::Last | Pooling::Cls => {
            let last = g.index_select(h, 1, vec![s[1] - 1])?;
            g.reshape(last, &[s[0], s[2]])
        }
    }
}
